//! Fixed-size 3D tokens from a variable-size scene: anchor sampling,
//! k-nearest-neighbour grouping and a shared projection.

mod anchors;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussians::{GaussianScene, ATTRIBUTES};
use crate::numerics::{Bound, Graph, Linear, ParamStore, Tensor, Var};

pub use anchors::{farthest_point_sampling, AnchorStrategy};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerConfig {
    /// Number of tokens (anchors).
    pub n: usize,
    /// Primitives per group, anchor included.
    pub k: usize,
    #[serde(default)]
    pub strategy: AnchorStrategy,
    #[serde(default)]
    pub seed: u64,
    pub d_model: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            n: 32,
            k: 16,
            strategy: AnchorStrategy::Random,
            seed: 0,
            d_model: 128,
        }
    }
}

impl TokenizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.k == 0 || self.d_model == 0 {
            return Err(Error::Config(format!(
                "tokenizer needs n, k, d_model ≥ 1 (got {}, {}, {})",
                self.n, self.k, self.d_model
            )));
        }
        Ok(())
    }

    /// Width of one raw token, `k · 14`.
    pub fn raw_width(&self) -> usize {
        self.k * ATTRIBUTES
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenBatch {
    /// `[n, k·14]`; row `t` holds group `t`'s members in order.
    pub raw: Tensor,
    pub anchors: Vec<usize>,
    /// `[n][k]` scene indices; entry 0 is the anchor.
    pub groups: Vec<Vec<usize>>,
    /// `[n, d_model]` once a [`TokenProjection`] has been applied.
    pub projected: Option<Tensor>,
}

impl TokenBatch {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

/// Rank of every primitive in the canonical (lexicographic μ) order.
fn canonical_ranks(canonical: &[usize]) -> Vec<usize> {
    let mut rank = vec![0; canonical.len()];
    for (r, &i) in canonical.iter().enumerate() {
        rank[i] = r;
    }
    rank
}

/// `config.n` anchor indices. Randomness is drawn against the canonical
/// order, so the result does not depend on storage order. With fewer
/// primitives than anchors every primitive is used once and the rest are
/// drawn with replacement.
pub fn sample_anchors(scene: &GaussianScene, config: &TokenizerConfig) -> Result<Vec<usize>> {
    config.validate()?;
    if scene.is_empty() {
        return Err(Error::EmptyScene);
    }
    let canonical = scene.canonical_order();
    let total = canonical.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let first = config.n.min(total);
    let mut positions = anchors::select(config.strategy, scene, &canonical, first, &mut rng);
    while positions.len() < config.n {
        positions.push(rng.gen_range(0..total));
    }
    Ok(positions.into_iter().map(|p| canonical[p]).collect())
}

/// For each anchor: the anchor followed by its `k − 1` nearest other
/// primitives by distance on μ, ties broken by canonical rank. Groups are
/// padded with the anchor when the scene is too small.
pub fn group_knn(scene: &GaussianScene, anchors: &[usize], k: usize) -> Vec<Vec<usize>> {
    let rank = canonical_ranks(&scene.canonical_order());
    let mu = scene.mu();
    let want = k.saturating_sub(1);
    anchors
        .iter()
        .map(|&a| {
            let pa = mu[a];
            let mut cand: Vec<(f64, usize, usize)> = (0..mu.len())
                .filter(|&j| j != a)
                .map(|j| {
                    let d: f64 = (0..3).map(|c| (mu[j][c] as f64 - pa[c] as f64).powi(2)).sum();
                    (d, rank[j], j)
                })
                .collect();
            let cmp = |x: &(f64, usize, usize), y: &(f64, usize, usize)| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1));
            let take = want.min(cand.len());
            if take > 0 && take < cand.len() {
                cand.select_nth_unstable_by(take - 1, cmp);
            }
            cand.truncate(take);
            cand.sort_by(cmp);
            let mut group = Vec::with_capacity(k.max(1));
            group.push(a);
            group.extend(cand.iter().map(|c| c.2));
            group.resize(k.max(1), a);
            group
        })
        .collect()
}

/// Concatenate member attributes per group. The anchor keeps its absolute
/// μ; every other member's μ is relative to the anchor.
pub fn assemble_tokens(scene: &GaussianScene, anchors: &[usize], groups: &[Vec<usize>]) -> Result<TokenBatch> {
    let k = groups.first().map_or(0, Vec::len);
    if groups.len() != anchors.len() || groups.iter().any(|g| g.len() != k || g.is_empty()) {
        return Err(Error::Config("groups must be non-empty and equally sized, one per anchor".into()));
    }
    let mut raw = Vec::with_capacity(groups.len() * k * ATTRIBUTES);
    for (g, &a) in groups.iter().zip(anchors) {
        if g[0] != a {
            return Err(Error::Config(format!("group for anchor {a} does not start with it")));
        }
        let origin = scene.mu()[a];
        for (slot, &m) in g.iter().enumerate() {
            let mut attrs = scene.primitive(m).attributes();
            if slot > 0 {
                for c in 0..3 {
                    attrs[c] -= origin[c];
                }
            }
            raw.extend_from_slice(&attrs);
        }
    }
    Ok(TokenBatch {
        raw: Tensor::new([groups.len(), k * ATTRIBUTES], raw)?,
        anchors: anchors.to_vec(),
        groups: groups.to_vec(),
        projected: None,
    })
}

/// Anchors, groups and raw tokens in one call.
pub fn tokenize(scene: &GaussianScene, config: &TokenizerConfig) -> Result<TokenBatch> {
    let anchors = sample_anchors(scene, config)?;
    let groups = group_knn(scene, &anchors, config.k);
    assemble_tokens(scene, &anchors, &groups)
}

/// Shared two-layer map from `k·14` raw features to `d_model`.
#[derive(Clone, Copy, Debug)]
pub struct TokenProjection {
    pub hidden: Linear,
    pub out: Linear,
}

impl TokenProjection {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: &TokenizerConfig, rng: &mut R) -> Self {
        Self {
            hidden: Linear::new(store, "tokens.proj1", config.raw_width(), config.d_model, rng),
            out: Linear::new(store, "tokens.proj2", config.d_model, config.d_model, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, raw: Var) -> Result<Var> {
        let width = g.value(raw).cols();
        if width != self.hidden.inputs {
            return Err(Error::Config(format!(
                "raw token width {width} does not match projection input {}",
                self.hidden.inputs
            )));
        }
        let h = self.hidden.forward(g, p, raw)?;
        let h = g.gelu(h);
        self.out.forward(g, p, h)
    }

    /// Projected tokens `[n, d_model]` without gradient tracking.
    pub fn project(&self, store: &ParamStore, tokens: &TokenBatch) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let raw = g.constant(tokens.raw.clone());
        let out = self.forward(&mut g, &p, raw)?;
        Ok(g.value(out).clone())
    }

    pub fn apply(&self, store: &ParamStore, tokens: &mut TokenBatch) -> Result<()> {
        tokens.projected = Some(self.project(store, tokens)?);
        Ok(())
    }
}
