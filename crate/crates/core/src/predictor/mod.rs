//! The variation predictor: instruction embedding, the field generator over
//! scene tokens and noise, and per-primitive decoders.

mod checkpoint;
mod layers;
mod text;

use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussians::{GaussianScene, Variation, ATTRIBUTES};
use crate::numerics::{Bound, Graph, LayerNorm, Linear, ParamId, ParamStore, Tensor, Var};
use crate::tokenizer::{tokenize, TokenBatch, TokenProjection, TokenizerConfig};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use layers::{Attention, Decoder, DecoderBlock, FeedForward, FieldBlock};
pub use text::{fnv1a, normalize_instruction, Vocabulary, DEFAULT_BUCKETS, DEFAULT_WORDS};

/// Output widths of the position decoder and the remaining-attribute decoder.
pub const MU_WIDTH: usize = 3;
pub const REST_WIDTH: usize = 11;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub tokenizer: TokenizerConfig,
    pub d_text: usize,
    /// Noise values concatenated to each token.
    pub d_eps: usize,
    pub field_blocks: usize,
    pub field_heads: usize,
    pub decoder_blocks: usize,
    pub decoder_width: usize,
    pub decoder_heads: usize,
    pub init_seed: u64,
    /// Primitives decoded per graph at inference time.
    pub chunk: usize,
    #[serde(default)]
    pub vocabulary: Vocabulary,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            tokenizer: TokenizerConfig::default(),
            d_text: 64,
            d_eps: 16,
            field_blocks: 4,
            field_heads: 4,
            decoder_blocks: 2,
            decoder_width: 64,
            decoder_heads: 1,
            init_seed: 0,
            chunk: 4096,
            vocabulary: Vocabulary::default(),
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        self.tokenizer.validate()?;
        self.vocabulary.validate()?;
        let d = self.tokenizer.d_model;
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if self.d_text == 0 || self.d_eps == 0 || self.decoder_width == 0 || self.chunk == 0 {
            return bad("d_text, d_eps, decoder_width and chunk must be ≥ 1");
        }
        if self.field_heads == 0 || d % self.field_heads != 0 {
            return bad("d_model must be divisible by field_heads");
        }
        if self.decoder_heads == 0 || self.decoder_width % self.decoder_heads != 0 {
            return bad("decoder_width must be divisible by decoder_heads");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    /// Positions first, then the other attributes given the moved positions.
    #[default]
    Iterative,
    /// One joint 14-wide head.
    Direct,
}

impl FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iterative" => Ok(Self::Iterative),
            "direct" => Ok(Self::Direct),
            other => Err(Error::Config(format!("unknown decode mode {other:?} (iterative|direct)"))),
        }
    }
}

/// Word rows and their embedding vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct InstructionEmbedding {
    pub rows: Vec<usize>,
    /// `[L, d_text]`.
    pub tokens: Tensor,
}

/// Standard-normal noise `[n, d_eps]` from a ChaCha8 stream seeded with `seed`.
pub fn draw_noise(seed: u64, n: usize, d_eps: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::randn([n, d_eps], 1.0, &mut rng)
}

/// Scalar summary of a noise draw: `Σ_t ε[t][0] / √n`, standard normal and
/// independent of token order.
pub fn eps0(eps: &Tensor) -> f32 {
    let n = eps.rows();
    let s: f64 = (0..n).map(|t| eps.row(t)[0] as f64).sum();
    (s / (n as f64).sqrt()) as f32
}

/// Per-primitive attribute rows `[N, 14]`.
pub fn attribute_matrix(scene: &GaussianScene) -> Tensor {
    let data: Vec<f32> = (0..scene.len()).flat_map(|i| scene.primitive(i).attributes()).collect();
    Tensor::new([scene.len(), ATTRIBUTES], data).expect("attribute rows")
}

#[derive(Clone, Debug)]
pub struct Network {
    pub text: ParamId,
    pub tokens: TokenProjection,
    pub input: Linear,
    pub blocks: Vec<FieldBlock>,
    pub ln_field: LayerNorm,
    pub f1: Decoder,
    pub f2: Decoder,
    pub direct: Decoder,
}

/// Graph handles for one prediction.
#[derive(Clone, Copy, Debug)]
pub struct DeltaVars {
    /// `[N, 3]`.
    pub mu: Var,
    /// `[N, 11]`: scale, opacity, colour, rotation.
    pub rest: Var,
}

#[derive(Clone, Debug)]
pub struct Predictor {
    pub config: PredictorConfig,
    pub store: ParamStore,
    pub net: Network,
}

impl Predictor {
    /// Fresh weights from `config.init_seed`. Decoder heads start at zero.
    pub fn new(config: PredictorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let d = config.tokenizer.d_model;
        let text = store.add(
            "text.embedding",
            Tensor::randn([config.vocabulary.rows(), config.d_text], 1.0, &mut rng),
        );
        let tokens = TokenProjection::new(&mut store, &config.tokenizer, &mut rng);
        let input = Linear::new(&mut store, "field.input", d + config.d_eps, d, &mut rng);
        let blocks = (0..config.field_blocks)
            .map(|b| FieldBlock::new(&mut store, &format!("field.{b}"), d, config.d_text, config.field_heads, &mut rng))
            .collect();
        let ln_field = LayerNorm::new(&mut store, "field.ln_out", d);
        let mut decoder = |name: &str, out: usize| {
            Decoder::new(
                &mut store,
                name,
                ATTRIBUTES,
                config.decoder_width,
                d,
                config.decoder_blocks,
                config.decoder_heads,
                out,
                &mut rng,
            )
        };
        let f1 = decoder("f1", MU_WIDTH);
        let f2 = decoder("f2", REST_WIDTH);
        let direct = decoder("direct", ATTRIBUTES);
        Ok(Self {
            net: Network {
                text,
                tokens,
                input,
                blocks,
                ln_field,
                f1,
                f2,
                direct,
            },
            config,
            store,
        })
    }

    pub fn embed_instruction(&self, instruction: &str) -> Result<InstructionEmbedding> {
        let rows = self.config.vocabulary.encode(instruction)?;
        let table = self.store.get(self.net.text);
        let d = self.config.d_text;
        let data: Vec<f32> = rows.iter().flat_map(|&r| table.row(r).iter().copied()).collect();
        Ok(InstructionEmbedding {
            tokens: Tensor::new([rows.len(), d], data)?,
            rows,
        })
    }

    pub fn tokenize(&self, scene: &GaussianScene) -> Result<TokenBatch> {
        tokenize(scene, &self.config.tokenizer)
    }

    pub fn noise(&self, seed: u64) -> Tensor {
        draw_noise(seed, self.config.tokenizer.n, self.config.d_eps)
    }

    /// Field `[n, d_model]` as a graph node.
    pub fn field_graph(&self, g: &mut Graph, p: &Bound, tokens: &TokenBatch, eps: &Tensor, text_rows: &[usize]) -> Result<Var> {
        let n = tokens.len();
        if eps.shape() != [n, self.config.d_eps] {
            return Err(Error::Config(format!(
                "noise has shape {:?}, expected [{n}, {}]",
                eps.shape(),
                self.config.d_eps
            )));
        }
        let raw = g.constant(tokens.raw.clone());
        let x = self.net.tokens.forward(g, p, raw)?;
        let e = g.constant(eps.clone());
        let x = g.concat_cols(&[x, e])?;
        let mut x = self.net.input.forward(g, p, x)?;
        let text = g.gather_rows(p.var(self.net.text), text_rows)?;
        for b in &self.net.blocks {
            x = b.forward(g, p, x, text)?;
        }
        self.net.ln_field.forward(g, p, x)
    }

    /// Decoded deltas for attribute rows `attrs` (`[N, 14]`).
    pub fn decode_graph(&self, g: &mut Graph, p: &Bound, attrs: Var, field: Var, mode: DecodeMode) -> Result<DeltaVars> {
        match mode {
            DecodeMode::Iterative => {
                let mu = self.net.f1.forward(g, p, attrs, field)?;
                let moved = self.apply_mu(g, attrs, mu)?;
                let rest = self.net.f2.forward(g, p, moved, field)?;
                Ok(DeltaVars { mu, rest })
            }
            DecodeMode::Direct => {
                let all = self.net.direct.forward(g, p, attrs, field)?;
                Ok(DeltaVars {
                    mu: g.slice_cols(all, 0, MU_WIDTH)?,
                    rest: g.slice_cols(all, MU_WIDTH, REST_WIDTH)?,
                })
            }
        }
    }

    fn apply_mu(&self, g: &mut Graph, attrs: Var, mu: Var) -> Result<Var> {
        let pos = g.slice_cols(attrs, 0, MU_WIDTH)?;
        let pos = g.add(pos, mu)?;
        let others = g.slice_cols(attrs, MU_WIDTH, REST_WIDTH)?;
        g.concat_cols(&[pos, others])
    }

    pub fn generate_field(&self, tokens: &TokenBatch, eps: &Tensor, instruction: &InstructionEmbedding) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let f = self.field_graph(&mut g, &p, tokens, eps, &instruction.rows)?;
        Ok(g.value(f).clone())
    }

    fn decode_chunked(&self, attrs: &Tensor, field: &Tensor, decoder: &Decoder) -> Result<Tensor> {
        let n = attrs.rows();
        let mut out = Vec::with_capacity(n * decoder.head.outputs);
        for start in (0..n).step_by(self.config.chunk) {
            let end = (start + self.config.chunk).min(n);
            let rows = Tensor::new([end - start, ATTRIBUTES], attrs.data()[start * ATTRIBUTES..end * ATTRIBUTES].to_vec())?;
            let mut g = Graph::new();
            let p = self.store.bind(&mut g, false);
            let a = g.constant(rows);
            let f = g.constant(field.clone());
            let y = decoder.forward(&mut g, &p, a, f)?;
            out.extend_from_slice(g.value(y).data());
        }
        Tensor::new([n, decoder.head.outputs], out)
    }

    /// Position deltas `[N, 3]`.
    pub fn decode_mu(&self, scene: &GaussianScene, field: &Tensor) -> Result<Tensor> {
        self.decode_chunked(&attribute_matrix(scene), field, &self.net.f1)
    }

    /// Remaining deltas `[N, 11]` for a scene whose positions already
    /// include the position deltas.
    pub fn decode_rest(&self, moved: &GaussianScene, field: &Tensor) -> Result<Tensor> {
        self.decode_chunked(&attribute_matrix(moved), field, &self.net.f2)
    }

    /// Joint deltas `[N, 14]`.
    pub fn decode_direct(&self, scene: &GaussianScene, field: &Tensor) -> Result<Tensor> {
        self.decode_chunked(&attribute_matrix(scene), field, &self.net.direct)
    }

    pub fn predict(&self, scene: &GaussianScene, instruction: &str, seed: u64, mode: DecodeMode) -> Result<Variation> {
        let instr = self.embed_instruction(instruction)?;
        let tokens = self.tokenize(scene)?;
        let field = self.generate_field(&tokens, &self.noise(seed), &instr)?;
        let attrs = attribute_matrix(scene);
        let n = scene.len();
        let mut rows = vec![0f32; n * ATTRIBUTES];
        match mode {
            DecodeMode::Iterative => {
                let mu = self.decode_chunked(&attrs, &field, &self.net.f1)?;
                let mut moved = attrs.clone();
                for i in 0..n {
                    for c in 0..MU_WIDTH {
                        moved.row_mut(i)[c] += mu.row(i)[c];
                    }
                }
                let rest = self.decode_chunked(&moved, &field, &self.net.f2)?;
                for i in 0..n {
                    rows[i * ATTRIBUTES..i * ATTRIBUTES + MU_WIDTH].copy_from_slice(mu.row(i));
                    rows[i * ATTRIBUTES + MU_WIDTH..(i + 1) * ATTRIBUTES].copy_from_slice(rest.row(i));
                }
            }
            DecodeMode::Direct => {
                rows = self.decode_chunked(&attrs, &field, &self.net.direct)?.into_data();
            }
        }
        Variation::from_rows(scene.content_id(), &rows)
    }
}
