//! Prompt-suite construction: base, pair, trio, contextual and adversarial
//! prompts sampled deterministically from a concept registry, plus ordering
//! variants for order-sensitivity measurement.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::{Concept, ConceptRegistry, Group, LookupEntry, LookupTable};

#[derive(Debug, Error, PartialEq)]
pub enum SuiteError {
    #[error("insufficient concepts for {category}: budget {budget} exceeds capacity {capacity}")]
    InsufficientConcepts {
        category: PromptCategory,
        budget: usize,
        capacity: usize,
    },
    #[error("invalid suite spec: {0}")]
    InvalidSpec(String),
    #[error("template error: {0}")]
    Template(String),
    #[error("unknown concept {0:?}")]
    UnknownConcept(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptCategory {
    Base,
    Pair,
    Trio,
    Contextual,
    Adversarial,
}

impl PromptCategory {
    pub const ALL: [PromptCategory; 5] = [
        PromptCategory::Base,
        PromptCategory::Pair,
        PromptCategory::Trio,
        PromptCategory::Contextual,
        PromptCategory::Adversarial,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PromptCategory::Base => "base",
            PromptCategory::Pair => "pair",
            PromptCategory::Trio => "trio",
            PromptCategory::Contextual => "contextual",
            PromptCategory::Adversarial => "adversarial",
        }
    }

    /// Fixed component count, for the categories that have one.
    pub fn fixed_k(&self) -> Option<usize> {
        match self {
            PromptCategory::Base => Some(1),
            PromptCategory::Pair => Some(2),
            PromptCategory::Trio => Some(3),
            PromptCategory::Contextual | PromptCategory::Adversarial => None,
        }
    }

    pub fn has_context(&self) -> bool {
        self.fixed_k().is_none()
    }

    pub fn default_template(&self) -> &'static str {
        match self {
            PromptCategory::Base => "a photo of {1}",
            PromptCategory::Pair => "{1} next to {2}",
            PromptCategory::Trio => "{1}, {2} and {3}",
            PromptCategory::Contextual | PromptCategory::Adversarial => "{1} {context}",
        }
    }
}

impl fmt::Display for PromptCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptCategory {
    type Err = SuiteError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| SuiteError::InvalidSpec(format!("unknown category {s:?}")))
    }
}

/// Multiset of the group tags of a prompt's components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct GroupProfile {
    pub mainstream: usize,
    pub marginalized: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    Mainstream,
    Marginalized,
    Mixed,
}

impl ProfileKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProfileKind::Mainstream => "mainstream",
            ProfileKind::Marginalized => "marginalized",
            ProfileKind::Mixed => "mixed",
        }
    }
}

impl fmt::Display for ProfileKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl GroupProfile {
    pub fn of<'a>(concepts: impl IntoIterator<Item = &'a Concept>) -> Self {
        let mut p = GroupProfile::default();
        for c in concepts {
            match c.group {
                Group::Mainstream => p.mainstream += 1,
                Group::Marginalized => p.marginalized += 1,
            }
        }
        p
    }

    /// Group used for disparity statistics: marginalized iff any component is.
    pub fn group(&self) -> Group {
        if self.marginalized > 0 {
            Group::Marginalized
        } else {
            Group::Mainstream
        }
    }

    pub fn kind(&self) -> ProfileKind {
        match (self.mainstream, self.marginalized) {
            (_, 0) => ProfileKind::Mainstream,
            (0, _) => ProfileKind::Marginalized,
            _ => ProfileKind::Mixed,
        }
    }
}

impl fmt::Display for GroupProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "mainstream={},marginalized={}",
            self.mainstream, self.marginalized
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: String,
    pub category: PromptCategory,
    pub components: Vec<String>,
    pub ordering_index: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_tag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_text: Option<String>,
    pub text: String,
    pub group_profile: GroupProfile,
    pub stratum: String,
}

impl Prompt {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn stratum_key(&self) -> String {
        stratum_key(self.category, &self.group_profile, self.k())
    }

    /// Component ids sorted; identical for every ordering of the same prompt.
    pub fn multiset_key(&self) -> String {
        let mut ids = self.components.clone();
        ids.sort();
        let mut key = format!("{}:{}", self.category, ids.join("+"));
        if let Some(tag) = &self.context_tag {
            key.push('@');
            key.push_str(tag);
        }
        key
    }

    pub fn lookup_entry(&self) -> LookupEntry {
        LookupEntry {
            prompt_id: self.id.clone(),
            k: self.k(),
            components: self.components.clone(),
        }
    }
}

pub fn stratum_key(category: PromptCategory, profile: &GroupProfile, k: usize) -> String {
    format!("{category}|{profile}|k={k}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextKind {
    #[default]
    Contextual,
    Adversarial,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub tag: String,
    pub text: String,
    #[serde(default)]
    pub kind: ContextKind,
}

/// Which group compositions a multi-component category may sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupMix {
    #[default]
    Any,
    /// At least one component from each group.
    Mixed,
    /// All components from one group.
    Same,
}

impl GroupMix {
    fn admits(&self, profile: &GroupProfile) -> bool {
        match self {
            GroupMix::Any => true,
            GroupMix::Mixed => profile.mainstream > 0 && profile.marginalized > 0,
            GroupMix::Same => profile.mainstream == 0 || profile.marginalized == 0,
        }
    }
}

/// Budgets, templates and context lists. Keys are category names so that an
/// unknown category surfaces as [`SuiteError::InvalidSpec`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSpec {
    #[serde(default)]
    pub budget: BTreeMap<String, usize>,
    #[serde(default)]
    pub templates: BTreeMap<String, String>,
    #[serde(default)]
    pub contexts: Vec<ContextEntry>,
    #[serde(default)]
    pub mix: BTreeMap<String, GroupMix>,
}

impl SuiteSpec {
    pub fn with_budget(budget: &[(PromptCategory, usize)]) -> Self {
        Self {
            budget: budget.iter().map(|(c, n)| (c.as_str().to_string(), *n)).collect(),
            ..Default::default()
        }
    }

    /// Templates for every category, spec entries overriding the defaults.
    pub fn template_set(&self) -> Result<TemplateSet, SuiteError> {
        let mut set = TemplateSet::default();
        for (key, template) in &self.templates {
            let category: PromptCategory = key.parse()?;
            set.insert(category, template)?;
        }
        Ok(set)
    }

    fn budgets(&self) -> Result<BTreeMap<PromptCategory, usize>, SuiteError> {
        self.budget.iter().map(|(k, v)| Ok((k.parse()?, *v))).collect()
    }

    fn mixes(&self) -> Result<BTreeMap<PromptCategory, GroupMix>, SuiteError> {
        self.mix.iter().map(|(k, v)| Ok((k.parse()?, *v))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Template {
    raw: String,
    /// Number of positional placeholders.
    k: usize,
    has_context: bool,
}

impl Template {
    fn parse(category: PromptCategory, raw: &str) -> Result<Self, SuiteError> {
        let mut positions: Vec<usize> = Vec::new();
        let mut has_context = false;
        let mut rest = raw;
        while let Some(open) = rest.find('{') {
            let close = rest[open..]
                .find('}')
                .ok_or_else(|| SuiteError::InvalidSpec(format!("unterminated placeholder in {raw:?}")))?
                + open;
            let name = &rest[open + 1..close];
            if name == "context" {
                has_context = true;
            } else {
                let n: usize = name.parse().map_err(|_| {
                    SuiteError::InvalidSpec(format!("unknown placeholder {{{name}}} in {raw:?}"))
                })?;
                positions.push(n);
            }
            rest = &rest[close + 1..];
        }
        positions.sort_unstable();
        let k = positions.len();
        if k == 0 || positions.iter().enumerate().any(|(i, &p)| p != i + 1) {
            return Err(SuiteError::InvalidSpec(format!(
                "template {raw:?} must use each of {{1}}..{{K}} exactly once"
            )));
        }
        if let Some(fixed) = category.fixed_k() {
            if k != fixed {
                return Err(SuiteError::InvalidSpec(format!(
                    "{category} template {raw:?} has {k} placeholders, expected {fixed}"
                )));
            }
        }
        if category.has_context() != has_context {
            return Err(SuiteError::InvalidSpec(format!(
                "{category} template {raw:?}: {{context}} placeholder {}",
                if has_context { "not allowed" } else { "required" }
            )));
        }
        Ok(Self {
            raw: raw.to_string(),
            k,
            has_context,
        })
    }
}

/// Category → template with positional placeholders `{1}..{K}` and, for
/// contextual and adversarial prompts, `{context}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: BTreeMap<PromptCategory, Template>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        let templates = PromptCategory::ALL
            .into_iter()
            .map(|c| {
                (
                    c,
                    Template::parse(c, c.default_template()).expect("default template"),
                )
            })
            .collect();
        Self { templates }
    }
}

impl TemplateSet {
    pub fn empty() -> Self {
        Self {
            templates: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, category: PromptCategory, raw: &str) -> Result<(), SuiteError> {
        self.templates.insert(category, Template::parse(category, raw)?);
        Ok(())
    }

    /// Component count implied by the category's template.
    pub fn k(&self, category: PromptCategory) -> Result<usize, SuiteError> {
        self.templates
            .get(&category)
            .map(|t| t.k)
            .ok_or_else(|| SuiteError::Template(format!("no template for category {category}")))
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        self.templates
            .iter()
            .map(|(c, t)| (c.to_string(), t.raw.clone()))
            .collect()
    }
}

/// Fills the category template with component labels in component order.
pub fn render_prompt_text(
    prompt: &Prompt,
    templates: &TemplateSet,
    registry: &ConceptRegistry,
) -> Result<String, SuiteError> {
    let template = templates
        .templates
        .get(&prompt.category)
        .ok_or_else(|| SuiteError::Template(format!("no template for category {}", prompt.category)))?;
    if template.k != prompt.k() {
        return Err(SuiteError::Template(format!(
            "template {:?} has {} placeholders but prompt {} has K={}",
            template.raw,
            template.k,
            prompt.id,
            prompt.k()
        )));
    }
    let mut out = template.raw.clone();
    if template.has_context {
        let context = prompt
            .context_text
            .as_deref()
            .ok_or_else(|| SuiteError::Template(format!("prompt {} has no context text", prompt.id)))?;
        out = out.replace("{context}", context);
    }
    for (i, id) in prompt.components.iter().enumerate() {
        let concept = registry
            .get(id)
            .ok_or_else(|| SuiteError::UnknownConcept(id.clone()))?;
        out = out.replace(&format!("{{{}}}", i + 1), &concept.label);
    }
    Ok(out)
}

pub fn factorial(k: usize) -> u64 {
    (1..=k as u64).product()
}

/// Lexicographic rank of a permutation of `0..perm.len()`.
pub fn permutation_rank(perm: &[usize]) -> u64 {
    let k = perm.len();
    let mut rank = 0u64;
    for i in 0..k {
        let smaller_after = perm[i + 1..].iter().filter(|&&p| p < perm[i]).count() as u64;
        rank += smaller_after * factorial(k - 1 - i);
    }
    rank
}

/// Inverse of [`permutation_rank`].
pub fn permutation_unrank(mut rank: u64, k: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..k).collect();
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let f = factorial(k - 1 - i);
        let idx = (rank / f) as usize;
        rank %= f;
        out.push(pool.remove(idx));
    }
    out
}

/// Reorders sorted component ids by the permutation with the given rank.
fn arrange(sorted_ids: &[String], rank: u64) -> Vec<String> {
    permutation_unrank(rank, sorted_ids.len())
        .into_iter()
        .map(|i| sorted_ids[i].clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSuite {
    pub prompts: Vec<Prompt>,
    pub strata: BTreeMap<String, Vec<String>>,
    pub seed: u64,
    pub budget: BTreeMap<String, usize>,
}

impl PromptSuite {
    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Prompt> {
        self.prompts.iter().find(|p| p.id == id)
    }

    pub fn count(&self, category: PromptCategory) -> usize {
        self.prompts.iter().filter(|p| p.category == category).count()
    }

    pub fn lookup_table(&self, registry: &ConceptRegistry) -> LookupTable {
        LookupTable::new(self.prompts.iter().map(Prompt::lookup_entry).collect(), registry)
    }

    /// One prompt per line; the canonical serialization.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for p in &self.prompts {
            out.push_str(&serde_json::to_string(p).expect("prompt serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_prompts(prompts: Vec<Prompt>, seed: u64) -> Self {
        let mut strata: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut budget: BTreeMap<String, usize> = BTreeMap::new();
        for p in &prompts {
            strata.entry(p.stratum.clone()).or_default().push(p.id.clone());
            *budget.entry(p.category.to_string()).or_default() += 1;
        }
        Self {
            prompts,
            strata,
            seed,
            budget,
        }
    }

    pub fn parse_jsonl(text: &str, seed: u64) -> Result<Self, serde_json::Error> {
        let prompts = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<Prompt>, _>>()?;
        Ok(Self::from_prompts(prompts, seed))
    }
}

/// Every `k`-subset of `0..n`, lexicographic.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k == 0 || k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn category_stream(category: PromptCategory) -> u64 {
    PromptCategory::ALL.iter().position(|c| *c == category).unwrap() as u64
}

/// Samples a suite meeting every category budget exactly. A pure function of
/// the registry contents, the spec and the seed.
pub fn build_suite(
    registry: &ConceptRegistry,
    spec: &SuiteSpec,
    seed: u64,
) -> Result<PromptSuite, SuiteError> {
    let budgets = spec.budgets()?;
    let mixes = spec.mixes()?;
    let templates = spec.template_set()?;
    let concepts = registry.concepts();
    let mut prompts = Vec::new();

    for category in PromptCategory::ALL {
        let budget = budgets.get(&category).copied().unwrap_or(0);
        if budget == 0 {
            continue;
        }
        let k = templates.k(category)?;
        let mix = mixes.get(&category).copied().unwrap_or_default();
        let contexts: Vec<&ContextEntry> = match category {
            PromptCategory::Contextual => spec
                .contexts
                .iter()
                .filter(|c| c.kind == ContextKind::Contextual)
                .collect(),
            PromptCategory::Adversarial => spec
                .contexts
                .iter()
                .filter(|c| c.kind == ContextKind::Adversarial)
                .collect(),
            _ => Vec::new(),
        };
        if category.has_context() && contexts.is_empty() {
            return Err(SuiteError::InvalidSpec(format!(
                "{category} budget {budget} but no {category} contexts"
            )));
        }

        let combos: Vec<Vec<usize>> = combinations(concepts.len(), k)
            .into_iter()
            .filter(|combo| mix.admits(&GroupProfile::of(combo.iter().map(|&i| &concepts[i]))))
            .collect();
        let per_combo = contexts.len().max(1);
        let capacity = combos.len() * per_combo;
        if budget > capacity {
            return Err(SuiteError::InsufficientConcepts {
                category,
                budget,
                capacity,
            });
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(category_stream(category));
        let mut picks = index::sample(&mut rng, capacity, budget).into_vec();
        picks.sort_unstable();

        for (n, pick) in picks.into_iter().enumerate() {
            let combo = &combos[pick / per_combo];
            let context = contexts.get(pick % per_combo).copied();
            let sorted_ids: Vec<String> = combo.iter().map(|&i| concepts[i].id.clone()).collect();
            let rank = rng.gen_range(0..factorial(k));
            let profile = GroupProfile::of(combo.iter().map(|&i| &concepts[i]));
            let mut prompt = Prompt {
                id: format!("{category}-{:04}", n + 1),
                category,
                components: arrange(&sorted_ids, rank),
                ordering_index: rank,
                context_tag: context.map(|c| c.tag.clone()),
                context_text: context.map(|c| c.text.clone()),
                text: String::new(),
                group_profile: profile,
                stratum: stratum_key(category, &profile, k),
            };
            prompt.text = render_prompt_text(&prompt, &templates, registry)?;
            prompts.push(prompt);
        }
    }

    let budget = budgets.iter().map(|(c, n)| (c.to_string(), *n)).collect();
    let mut suite = PromptSuite::from_prompts(prompts, seed);
    suite.budget = budget;
    Ok(suite)
}

/// Returns `min(K!, max_orderings)` orderings of `prompt`, the original
/// first, the rest in ascending ordering index. Variants get ids of the form
/// `<id>@o<rank>`.
pub fn enumerate_orderings(
    prompt: &Prompt,
    max_orderings: usize,
    seed: u64,
    templates: &TemplateSet,
    registry: &ConceptRegistry,
) -> Result<Vec<Prompt>, SuiteError> {
    let k = prompt.k();
    let total = factorial(k);
    let wanted = (max_orderings.max(1) as u64).min(total);
    let mut sorted_ids = prompt.components.clone();
    sorted_ids.sort();
    let perm: Vec<usize> = prompt
        .components
        .iter()
        .map(|c| sorted_ids.iter().position(|s| s == c).expect("component present"))
        .collect();
    let original = permutation_rank(&perm);

    let mut ranks: BTreeSet<u64> = BTreeSet::new();
    if wanted == total {
        ranks.extend(0..total);
    } else {
        // Sample among the ranks other than the original.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picks = index::sample(&mut rng, (total - 1) as usize, (wanted - 1) as usize);
        for p in picks.iter() {
            let p = p as u64;
            ranks.insert(if p >= original { p + 1 } else { p });
        }
    }
    ranks.remove(&original);

    let mut out = vec![prompt.clone()];
    for rank in ranks {
        let mut variant = prompt.clone();
        variant.id = format!("{}@o{rank}", prompt.id);
        variant.components = arrange(&sorted_ids, rank);
        variant.ordering_index = rank;
        variant.text = render_prompt_text(&variant, templates, registry)?;
        out.push(variant);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::Category;

    fn registry(n_main: usize, n_marg: usize) -> ConceptRegistry {
        let mut v = Vec::new();
        for i in 0..n_main {
            v.push(Concept::new(
                &format!("m{i:03}"),
                &format!("Main {i}"),
                Category::Monuments,
                Group::Mainstream,
            ));
        }
        for i in 0..n_marg {
            v.push(Concept::new(
                &format!("x{i:03}"),
                &format!("Marg {i}"),
                Category::Flags,
                Group::Marginalized,
            ));
        }
        ConceptRegistry::from_concepts(v).unwrap()
    }

    #[test]
    fn rank_unrank_roundtrip() {
        for k in 1..=5 {
            for r in 0..factorial(k) {
                assert_eq!(permutation_rank(&permutation_unrank(r, k)), r);
            }
        }
        assert_eq!(permutation_unrank(0, 3), vec![0, 1, 2]);
        assert_eq!(permutation_unrank(5, 3), vec![2, 1, 0]);
    }

    #[test]
    fn combinations_count() {
        assert_eq!(combinations(5, 2).len(), 10);
        assert_eq!(combinations(6, 3).len(), 20);
        assert_eq!(combinations(3, 4).len(), 0);
        assert_eq!(combinations(1, 1), vec![vec![0]]);
    }

    #[test]
    fn empty_budget_gives_empty_suite() {
        let spec = SuiteSpec::with_budget(&[
            (PromptCategory::Base, 0),
            (PromptCategory::Pair, 0),
            (PromptCategory::Trio, 0),
            (PromptCategory::Contextual, 0),
        ]);
        assert!(build_suite(&registry(3, 3), &spec, 1).unwrap().is_empty());
    }

    #[test]
    fn unknown_category_and_bad_template() {
        let mut spec = SuiteSpec::default();
        spec.budget.insert("quartet".into(), 1);
        assert!(matches!(
            build_suite(&registry(3, 3), &spec, 1),
            Err(SuiteError::InvalidSpec(_))
        ));

        let mut spec = SuiteSpec::with_budget(&[(PromptCategory::Pair, 1)]);
        spec.templates.insert("pair".into(), "{1} next to {3}".into());
        assert!(matches!(
            build_suite(&registry(3, 3), &spec, 1),
            Err(SuiteError::InvalidSpec(_))
        ));
        spec.templates.insert("pair".into(), "{1} near {who}".into());
        assert!(matches!(
            build_suite(&registry(3, 3), &spec, 1),
            Err(SuiteError::InvalidSpec(_))
        ));
    }

    #[test]
    fn insufficient_concepts() {
        let spec = SuiteSpec::with_budget(&[(PromptCategory::Pair, 11)]);
        let err = build_suite(&registry(3, 2), &spec, 1).unwrap_err();
        assert_eq!(
            err,
            SuiteError::InsufficientConcepts {
                category: PromptCategory::Pair,
                budget: 11,
                capacity: 10
            }
        );
    }

    #[test]
    fn group_mix_rules() {
        let mut spec = SuiteSpec::with_budget(&[(PromptCategory::Pair, 6)]);
        spec.mix.insert("pair".into(), GroupMix::Mixed);
        let suite = build_suite(&registry(3, 2), &spec, 9).unwrap();
        assert!(suite
            .prompts
            .iter()
            .all(|p| p.group_profile.kind() == ProfileKind::Mixed));
        spec.mix.insert("pair".into(), GroupMix::Same);
        // C(3,2) + C(2,2) = 4 same-group pairs.
        assert!(matches!(
            build_suite(&registry(3, 2), &spec, 9),
            Err(SuiteError::InsufficientConcepts { capacity: 4, .. })
        ));
    }

    #[test]
    fn render_examples() {
        let r = ConceptRegistry::from_concepts(vec![
            Concept::new("big_ben", "Big Ben", Category::Monuments, Group::Mainstream),
            Concept::new("taj_mahal", "Taj Mahal", Category::Monuments, Group::Marginalized),
        ])
        .unwrap();
        let templates = TemplateSet::default();
        let base = Prompt {
            id: "base-0001".into(),
            category: PromptCategory::Base,
            components: vec!["big_ben".into()],
            ordering_index: 0,
            context_tag: None,
            context_text: None,
            text: String::new(),
            group_profile: GroupProfile {
                mainstream: 1,
                marginalized: 0,
            },
            stratum: String::new(),
        };
        assert_eq!(
            render_prompt_text(&base, &templates, &r).unwrap(),
            "a photo of Big Ben"
        );

        let mut pair = base.clone();
        pair.category = PromptCategory::Pair;
        pair.components = vec!["big_ben".into(), "taj_mahal".into()];
        assert_eq!(
            render_prompt_text(&pair, &templates, &r).unwrap(),
            "Big Ben next to Taj Mahal"
        );
        pair.components.reverse();
        pair.ordering_index = 1;
        assert_eq!(
            render_prompt_text(&pair, &templates, &r).unwrap(),
            "Taj Mahal next to Big Ben"
        );

        assert!(matches!(
            render_prompt_text(&pair, &TemplateSet::empty(), &r),
            Err(SuiteError::Template(_))
        ));
    }
}
