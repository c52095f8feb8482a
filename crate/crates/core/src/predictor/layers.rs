use rand::Rng;

use crate::error::Result;
use crate::numerics::{Bound, Graph, LayerNorm, Linear, ParamStore, Var};

/// Multi-head attention with input and output projections.
#[derive(Clone, Copy, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        kv_width: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            q: Linear::new(store, &format!("{name}.q"), width, width, rng),
            k: Linear::new(store, &format!("{name}.k"), kv_width, width, rng),
            v: Linear::new(store, &format!("{name}.v"), kv_width, width, rng),
            o: Linear::new(store, &format!("{name}.o"), width, width, rng),
            heads,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, context: Var) -> Result<Var> {
        let q = self.q.forward(g, p, x)?;
        let k = self.k.forward(g, p, context)?;
        let v = self.v.forward(g, p, context)?;
        let a = g.attention(q, k, v, self.heads)?;
        self.o.forward(g, p, a)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, width: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            up: Linear::new(store, &format!("{name}.up"), width, hidden, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, width, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let h = self.up.forward(g, p, x)?;
        let h = g.gelu(h);
        self.down.forward(g, p, h)
    }
}

/// Pre-norm block: self-attention, cross-attention to the instruction,
/// feed-forward.
#[derive(Clone, Copy, Debug)]
pub struct FieldBlock {
    pub ln_self: LayerNorm,
    pub self_attn: Attention,
    pub ln_cross: LayerNorm,
    pub cross: Attention,
    pub ln_ff: LayerNorm,
    pub ff: FeedForward,
}

impl FieldBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        text_width: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            ln_self: LayerNorm::new(store, &format!("{name}.ln_self"), width),
            self_attn: Attention::new(store, &format!("{name}.self"), width, width, heads, rng),
            ln_cross: LayerNorm::new(store, &format!("{name}.ln_cross"), width),
            cross: Attention::new(store, &format!("{name}.cross"), width, text_width, heads, rng),
            ln_ff: LayerNorm::new(store, &format!("{name}.ln_ff"), width),
            ff: FeedForward::new(store, &format!("{name}.ff"), width, 4 * width, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, text: Var) -> Result<Var> {
        let h = self.ln_self.forward(g, p, x)?;
        let h = self.self_attn.forward(g, p, h, h)?;
        let x = g.add(x, h)?;
        let h = self.ln_cross.forward(g, p, x)?;
        let h = self.cross.forward(g, p, h, text)?;
        let x = g.add(x, h)?;
        let h = self.ln_ff.forward(g, p, x)?;
        let h = self.ff.forward(g, p, h)?;
        g.add(x, h)
    }
}

/// Per-primitive decoder block: cross-attention to the field, feed-forward.
#[derive(Clone, Copy, Debug)]
pub struct DecoderBlock {
    pub ln_cross: LayerNorm,
    pub cross: Attention,
    pub ln_ff: LayerNorm,
    pub ff: FeedForward,
}

/// Query projection, cross-attention blocks and a zero-initialised head.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub input: Linear,
    pub blocks: Vec<DecoderBlock>,
    pub ln_out: LayerNorm,
    pub head: Linear,
}

impl Decoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        width: usize,
        field_width: usize,
        blocks: usize,
        heads: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let input = Linear::new(store, &format!("{name}.input"), inputs, width, rng);
        let blocks = (0..blocks)
            .map(|b| DecoderBlock {
                ln_cross: LayerNorm::new(store, &format!("{name}.{b}.ln_cross"), width),
                cross: Attention::new(store, &format!("{name}.{b}.cross"), width, field_width, heads, rng),
                ln_ff: LayerNorm::new(store, &format!("{name}.{b}.ln_ff"), width),
                ff: FeedForward::new(store, &format!("{name}.{b}.ff"), width, 4 * width, rng),
            })
            .collect();
        Self {
            input,
            blocks,
            ln_out: LayerNorm::new(store, &format!("{name}.ln_out"), width),
            head: Linear::zeros(store, &format!("{name}.head"), width, outputs),
        }
    }

    /// `attrs: [N, 14]`, `field: [n, d_model]` → `[N, outputs]`. Rows are
    /// decoded independently of each other.
    pub fn forward(&self, g: &mut Graph, p: &Bound, attrs: Var, field: Var) -> Result<Var> {
        let mut x = self.input.forward(g, p, attrs)?;
        for b in &self.blocks {
            let h = b.ln_cross.forward(g, p, x)?;
            let h = b.cross.forward(g, p, h, field)?;
            x = g.add(x, h)?;
            let h = b.ln_ff.forward(g, p, x)?;
            let h = b.ff.forward(g, p, h)?;
            x = g.add(x, h)?;
        }
        let x = self.ln_out.forward(g, p, x)?;
        self.head.forward(g, p, x)
    }
}
