//! Deterministic mock world with planted ground truth.
//!
//! The compositor paints one glyph per planted concept, omitting or
//! substituting glyphs with seeded Bernoulli draws. Draws are taken in
//! ascending concept-id order, so outcomes do not depend on the order the
//! concepts are listed in. The backend additionally synthesizes attention
//! maps with a planted entropy profile and concept embeddings with planted
//! superposition.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Backend, GenerationError, GenerationRequest};
use crate::diagnostics::{AttentionTrace, EmbeddingSet};
use crate::glyph::{blank_canvas, encode_png, fill, GlyphAtlas, Region};
use crate::registry::{Concept, ConceptRegistry, Group};
use crate::suite::{ProfileKind, Prompt};
use crate::util::stable_u64;

pub const BASE_GLYPH: u32 = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedGlyph {
    pub concept: String,
    pub x: u32,
    pub y: u32,
    pub scale: f64,
}

impl PlantedGlyph {
    pub fn size(&self) -> u32 {
        ((BASE_GLYPH as f64) * self.scale).round().max(1.0) as u32
    }

    pub fn region(&self) -> Region {
        let s = self.size();
        Region {
            x0: self.x,
            y0: self.y,
            x1: self.x + s,
            y1: self.y + s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockSceneSpec {
    pub planted: Vec<PlantedGlyph>,
    #[serde(default)]
    pub omit_probability: BTreeMap<String, f64>,
    /// concept → (substitute, probability)
    #[serde(default)]
    pub conflate_map: BTreeMap<String, (String, f64)>,
    pub width: u32,
    pub height: u32,
    /// Filled by [`composite_mock`].
    #[serde(default)]
    pub ground_truth: BTreeSet<String>,
}

impl MockSceneSpec {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            planted: Vec::new(),
            omit_probability: BTreeMap::new(),
            conflate_map: BTreeMap::new(),
            width,
            height,
            ground_truth: BTreeSet::new(),
        }
    }

    pub fn plant(mut self, concept: &str, x: u32, y: u32, scale: f64) -> Self {
        self.planted.push(PlantedGlyph {
            concept: concept.to_string(),
            x,
            y,
            scale,
        });
        self
    }

    pub fn validate(&self) -> Result<(), GenerationError> {
        let bad = |msg: String| Err(GenerationError::InvalidScene(msg));
        for (id, p) in &self.omit_probability {
            if !(0.0..=1.0).contains(p) {
                return bad(format!("omit probability {p} for {id}"));
            }
        }
        for (id, (_, p)) in &self.conflate_map {
            if !(0.0..=1.0).contains(p) {
                return bad(format!("conflate probability {p} for {id}"));
            }
        }
        for g in &self.planted {
            if g.x >= self.width || g.y >= self.height || g.scale.is_nan() || g.scale <= 0.0 {
                return bad(format!(
                    "glyph {} at ({}, {}) outside canvas",
                    g.concept, g.x, g.y
                ));
            }
        }
        Ok(())
    }
}

/// Renders a scene. Returns PNG bytes and the concept ids whose glyphs were
/// painted (after omissions and substitutions).
pub fn composite_mock(
    scene: &MockSceneSpec,
    atlas: &GlyphAtlas,
    seed: u64,
) -> Result<(Vec<u8>, BTreeSet<String>), GenerationError> {
    scene.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let planted_ids: BTreeSet<&str> = scene.planted.iter().map(|g| g.concept.as_str()).collect();
    // concept → concept actually drawn (None = omitted)
    let mut outcome: BTreeMap<&str, Option<&str>> = BTreeMap::new();
    for id in planted_ids {
        let u_omit: f64 = rng.gen();
        let u_conflate: f64 = rng.gen();
        let omit = scene.omit_probability.get(id).copied().unwrap_or(0.0);
        let drawn = if u_omit < omit {
            None
        } else {
            match scene.conflate_map.get(id) {
                Some((sub, p)) if u_conflate < *p => Some(sub.as_str()),
                _ => Some(id),
            }
        };
        outcome.insert(id, drawn);
    }

    let mut canvas = blank_canvas(scene.width, scene.height);
    let mut ground_truth = BTreeSet::new();
    for g in &scene.planted {
        let Some(drawn) = outcome[g.concept.as_str()] else {
            continue;
        };
        let color = atlas
            .color_of(drawn)
            .ok_or_else(|| GenerationError::Render(format!("no glyph for concept {drawn:?}")))?;
        fill(&mut canvas, g.region(), color);
        ground_truth.insert(drawn.to_string());
    }
    Ok((encode_png(&canvas), ground_truth))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflateRule {
    pub from: String,
    pub to: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionWorld {
    pub layers: usize,
    pub queries: usize,
    pub keys: usize,
    /// Target mean row entropy (nats) at the peak layer, per group.
    pub mainstream_entropy: f64,
    pub marginalized_entropy: f64,
    pub peak_layer: usize,
    /// Fractional entropy reduction far from the peak.
    pub dip: f64,
    /// Gaussian width of the peak, in layers.
    pub width: f64,
    /// Per-prompt multiplicative spread of the target, ±.
    pub jitter: f64,
}

impl Default for AttentionWorld {
    fn default() -> Self {
        Self {
            layers: 12,
            queries: 8,
            keys: 64,
            mainstream_entropy: 1.2,
            marginalized_entropy: 3.8,
            peak_layer: 6,
            dip: 0.3,
            width: 2.0,
            jitter: 0.05,
        }
    }
}

impl AttentionWorld {
    /// Target mean entropy for a prompt profile at a layer, before jitter.
    pub fn target(&self, kind: ProfileKind, layer: usize) -> f64 {
        let base = match kind {
            ProfileKind::Mainstream => self.mainstream_entropy,
            ProfileKind::Marginalized => self.marginalized_entropy,
            ProfileKind::Mixed => 0.5 * (self.mainstream_entropy + self.marginalized_entropy),
        };
        let dl = layer as f64 - self.peak_layer as f64;
        let shape = 1.0 - self.dip * (1.0 - (-dl * dl / (2.0 * self.width * self.width)).exp());
        base * shape
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingWorld {
    pub dim: usize,
    /// Marginalized concepts are drawn from a shared subspace of this rank.
    pub shared_rank: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for EmbeddingWorld {
    fn default() -> Self {
        Self {
            dim: 64,
            shared_rank: 3,
            noise: 0.1,
            seed: 17,
        }
    }
}

/// Knobs of the mock world. Omission probability of a component is
/// `omit[group] + context_penalty (contextual/adversarial prompts) +
/// order_penalty × position`, overridden per concept by `omit_overrides`,
/// clamped to [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockWorld {
    pub width: u32,
    pub height: u32,
    pub glyph_size: u32,
    pub omit_mainstream: f64,
    pub omit_marginalized: f64,
    pub context_penalty: f64,
    pub order_penalty: f64,
    pub omit_overrides: BTreeMap<String, f64>,
    pub conflate: Vec<ConflateRule>,
    pub attention: AttentionWorld,
    pub embeddings: EmbeddingWorld,
    pub capture_attention: bool,
}

impl Default for MockWorld {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            glyph_size: 48,
            omit_mainstream: 0.05,
            omit_marginalized: 0.25,
            context_penalty: 0.0,
            order_penalty: 0.0,
            omit_overrides: BTreeMap::new(),
            conflate: Vec::new(),
            attention: AttentionWorld::default(),
            embeddings: EmbeddingWorld::default(),
            capture_attention: true,
        }
    }
}

pub struct MockBackend {
    world: MockWorld,
    registry: ConceptRegistry,
    atlas: GlyphAtlas,
    calls: AtomicUsize,
}

fn prompt_salt(prompt: &Prompt) -> u64 {
    let mut ids = prompt.components.clone();
    ids.sort();
    let key = format!(
        "{}|{}",
        ids.join("+"),
        prompt.context_tag.as_deref().unwrap_or("")
    );
    stable_u64(key.as_bytes())
}

fn mix(a: u64, b: u64) -> u64 {
    stable_u64(&[a.to_le_bytes(), b.to_le_bytes()].concat())
}

impl MockBackend {
    pub fn new(world: MockWorld, registry: ConceptRegistry) -> Self {
        let atlas = GlyphAtlas::from_registry(&registry);
        Self {
            world,
            registry,
            atlas,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn world(&self) -> &MockWorld {
        &self.world
    }

    pub fn atlas(&self) -> &GlyphAtlas {
        &self.atlas
    }

    /// Scene the backend renders for `prompt`: components laid out left to
    /// right in prompt order.
    pub fn scene_for(&self, prompt: &Prompt) -> MockSceneSpec {
        let w = &self.world;
        let k = prompt.components.len().max(1) as u32;
        let slot = w.width / k;
        let size = w.glyph_size.min(slot.saturating_sub(2)).max(1);
        let contextual = prompt.context_tag.is_some();
        let mut scene = MockSceneSpec::new(w.width, w.height);
        for (i, id) in prompt.components.iter().enumerate() {
            let x = i as u32 * slot + (slot - size) / 2;
            let y = (w.height.saturating_sub(size)) / 2;
            scene = scene.plant(id, x, y, size as f64 / BASE_GLYPH as f64);
            let group = self.registry.get(id).map(|c| c.group);
            let mut p = match group {
                Some(Group::Marginalized) => w.omit_marginalized,
                _ => w.omit_mainstream,
            };
            if contextual {
                p += w.context_penalty;
            }
            p += w.order_penalty * i as f64;
            if let Some(&o) = w.omit_overrides.get(id) {
                p = o;
            }
            scene.omit_probability.insert(id.clone(), p.clamp(0.0, 1.0));
        }
        for rule in &w.conflate {
            if prompt.components.contains(&rule.from) {
                scene
                    .conflate_map
                    .insert(rule.from.clone(), (rule.to.clone(), rule.probability));
            }
        }
        scene
    }

    pub fn scene_seed(&self, prompt: &Prompt, seed: u64) -> u64 {
        mix(prompt_salt(prompt), seed)
    }

    /// Image bytes and ground truth, without touching the call counter.
    pub fn compose(
        &self,
        prompt: &Prompt,
        seed: u64,
    ) -> Result<(Vec<u8>, BTreeSet<String>), GenerationError> {
        composite_mock(
            &self.scene_for(prompt),
            &self.atlas,
            self.scene_seed(prompt, seed),
        )
    }

    pub fn ground_truth(&self, prompt: &Prompt, seed: u64) -> Result<BTreeSet<String>, GenerationError> {
        Ok(self.compose(prompt, seed)?.1)
    }
}

impl Backend for MockBackend {
    fn id(&self) -> String {
        "mock".to_string()
    }

    fn render(&self, request: &GenerationRequest<'_>) -> Result<Vec<u8>, GenerationError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self.compose(request.prompt, request.seed)?.0)
    }

    fn capture_attention(&self, prompt: &Prompt, seed: u64) -> Result<Vec<AttentionTrace>, GenerationError> {
        if !self.world.capture_attention {
            return Err(GenerationError::CapabilityUnsupported(
                "mock attention capture disabled".into(),
            ));
        }
        let aw = &self.world.attention;
        let kind = prompt.group_profile.kind();
        let salt = prompt_salt(prompt);
        // Per-prompt factor in [1 - jitter, 1 + jitter].
        let u = (salt >> 11) as f64 / (1u64 << 53) as f64;
        let factor = 1.0 + aw.jitter * (2.0 * u - 1.0);
        let max_h = (aw.keys as f64).ln() * 0.98;
        let first = prompt.components.first().cloned().unwrap_or_default();
        let second = prompt.components.get(1).cloned().unwrap_or_else(|| first.clone());

        let mut traces = Vec::with_capacity(aw.layers);
        for layer in 0..aw.layers {
            let target = (aw.target(kind, layer) * factor).clamp(0.0, max_h);
            let mut rng = ChaCha8Rng::seed_from_u64(mix(mix(salt, seed), layer as u64));
            let weights = (0..aw.queries)
                .map(|_| {
                    let logits: Vec<f64> = (0..aw.keys).map(|_| rng.sample(StandardNormal)).collect();
                    row_with_entropy(&logits, target)
                })
                .collect();
            traces.push(AttentionTrace {
                prompt_id: prompt.id.clone(),
                layer,
                weights,
                concept_pair: (first.clone(), second.clone()),
                group_profile: kind,
                head_count: 1,
            });
        }
        Ok(traces)
    }

    fn concept_embeddings(&self, concepts: &[Concept]) -> Result<Vec<EmbeddingSet>, GenerationError> {
        let ew = &self.world.embeddings;
        let mut basis_rng = ChaCha8Rng::seed_from_u64(ew.seed);
        let shared: Vec<Vec<f64>> = (0..ew.shared_rank)
            .map(|_| (0..ew.dim).map(|_| basis_rng.sample(StandardNormal)).collect())
            .collect();

        let mut sets: BTreeMap<Group, EmbeddingSet> = BTreeMap::new();
        for c in concepts {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(ew.seed, stable_u64(c.id.as_bytes())));
            let v: Vec<f64> = match c.group {
                Group::Mainstream => (0..ew.dim).map(|_| rng.sample(StandardNormal)).collect(),
                Group::Marginalized => {
                    let coeffs: Vec<f64> = shared.iter().map(|_| rng.sample(StandardNormal)).collect();
                    (0..ew.dim)
                        .map(|j| {
                            let signal: f64 = coeffs.iter().zip(&shared).map(|(a, b)| a * b[j]).sum();
                            let noise: f64 = rng.sample(StandardNormal);
                            signal + ew.noise * noise
                        })
                        .collect()
                }
            };
            sets.entry(c.group)
                .or_insert_with(|| EmbeddingSet {
                    entries: BTreeMap::new(),
                    group: c.group,
                    source: "mock-text-encoder".into(),
                })
                .entries
                .insert(c.id.clone(), v);
        }
        Ok(sets.into_values().collect())
    }

    fn invocations(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| ((l - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn entropy_of(p: &[f64]) -> f64 {
    p.iter().filter(|&&a| a > 0.0).map(|&a| -a * a.ln()).sum()
}

/// Softmax of `logits` at the temperature whose entropy equals `target`
/// (found by bisection on log-temperature; entropy rises with temperature).
pub fn row_with_entropy(logits: &[f64], target: f64) -> Vec<f64> {
    let (mut lo, mut hi) = (-12.0f64, 12.0f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if entropy_of(&softmax(logits, mid.exp())) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    softmax(logits, (0.5 * (lo + hi)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::Category;

    fn atlas() -> GlyphAtlas {
        let reg = ConceptRegistry::from_concepts(vec![
            Concept::new("a", "A", Category::Flags, Group::Mainstream),
            Concept::new("b", "B", Category::Vehicles, Group::Marginalized),
            Concept::new("c", "C", Category::Food, Group::Marginalized),
        ])
        .unwrap();
        GlyphAtlas::from_registry(&reg)
    }

    #[test]
    fn omit_nothing_and_everything() {
        let atlas = atlas();
        let scene = MockSceneSpec::new(128, 64)
            .plant("a", 4, 4, 1.0)
            .plant("b", 60, 4, 1.0);
        let (_, gt) = composite_mock(&scene, &atlas, 1).unwrap();
        assert_eq!(gt, BTreeSet::from(["a".to_string(), "b".to_string()]));

        let mut scene = scene;
        scene.omit_probability.insert("b".into(), 1.0);
        let (_, gt) = composite_mock(&scene, &atlas, 1).unwrap();
        assert_eq!(gt, BTreeSet::from(["a".to_string()]));
    }

    #[test]
    fn conflation_substitutes_glyph() {
        let atlas = atlas();
        let mut scene = MockSceneSpec::new(128, 64).plant("b", 4, 4, 1.0);
        scene.conflate_map.insert("b".into(), ("c".into(), 1.0));
        let (_, gt) = composite_mock(&scene, &atlas, 5).unwrap();
        assert_eq!(gt, BTreeSet::from(["c".to_string()]));
    }

    #[test]
    fn pure_in_scene_and_seed() {
        let atlas = atlas();
        let mut scene = MockSceneSpec::new(128, 64)
            .plant("a", 4, 4, 1.0)
            .plant("b", 60, 4, 1.0);
        scene.omit_probability.insert("a".into(), 0.5);
        assert_eq!(
            composite_mock(&scene, &atlas, 42).unwrap(),
            composite_mock(&scene, &atlas, 42).unwrap()
        );
    }

    #[test]
    fn invalid_scenes() {
        let atlas = atlas();
        let mut scene = MockSceneSpec::new(64, 64).plant("a", 4, 4, 1.0);
        scene.omit_probability.insert("a".into(), 1.5);
        assert!(matches!(
            composite_mock(&scene, &atlas, 0),
            Err(GenerationError::InvalidScene(_))
        ));
        let off = MockSceneSpec::new(64, 64).plant("a", 64, 4, 1.0);
        assert!(matches!(
            composite_mock(&off, &atlas, 0),
            Err(GenerationError::InvalidScene(_))
        ));
        let missing = MockSceneSpec::new(64, 64).plant("zzz", 4, 4, 1.0);
        assert!(matches!(
            composite_mock(&missing, &atlas, 0),
            Err(GenerationError::Render(_))
        ));
    }

    #[test]
    fn entropy_targeting() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits: Vec<f64> = (0..64).map(|_| rng.sample(StandardNormal)).collect();
        for target in [0.5, 1.2, 3.8] {
            let row = row_with_entropy(&logits, target);
            assert!((entropy_of(&row) - target).abs() < 1e-9);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
