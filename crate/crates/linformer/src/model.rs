//! The prediction network: embedding, a stack of encoder layers whose mixer
//! is either the time-mixing MLP (TMLP) or multi-head self-attention, and the
//! dimension-wise separable linear head. Also exact parameter and
//! multiplication accounting for both variants.

use rand::Rng;

use crate::autodiff::{Matrix, NodeId, Tape};
use crate::error::{LabError, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixerKind {
    Tmlp,
    Attention,
}

impl MixerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MixerKind::Tmlp => "tmlp",
            MixerKind::Attention => "attention",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tmlp" => Ok(MixerKind::Tmlp),
            "attention" => Ok(MixerKind::Attention),
            other => Err(LabError::Config(format!("unknown mixer '{}'", other))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Input sequence length (past frames).
    pub n_past: usize,
    /// Output sequence length (future frames).
    pub n_future: usize,
    /// Model width d.
    pub d_model: usize,
    /// Encoder layers.
    pub n_layers: usize,
    pub r: usize,
    pub t: usize,
    pub mixer: MixerKind,
    /// Attention baseline only.
    pub heads: usize,
    /// Attention baseline only.
    pub use_pos_enc: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_past: 90,
            n_future: 10,
            d_model: 512,
            n_layers: 6,
            r: 2,
            t: 4,
            mixer: MixerKind::Tmlp,
            heads: 8,
            use_pos_enc: true,
        }
    }
}

impl ModelConfig {
    /// Real feature width per frame: stacked re/im over the antenna matrix.
    pub fn feat_dim(&self) -> usize {
        2 * self.r * self.t
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_past < 1
            || self.n_future < 1
            || self.d_model < 1
            || self.r < 1
            || self.t < 1
            || self.heads < 1
        {
            return Err(LabError::Config("all model dimensions must be >= 1".into()));
        }
        if self.mixer == MixerKind::Attention && self.d_model % self.heads != 0 {
            return Err(LabError::Config(format!(
                "d={} not divisible by heads={}",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum MixerParams {
    Tmlp { w1: Matrix, b1: Matrix, w2: Matrix, b2: Matrix },
    Attention { wq: Matrix, wk: Matrix, wv: Matrix, wo: Matrix },
}

#[derive(Debug, Clone)]
pub struct EncoderLayerParams {
    pub mixer: MixerParams,
    pub ffn_w1: Matrix,
    pub ffn_b1: Matrix,
    pub ffn_w2: Matrix,
    pub ffn_b2: Matrix,
    pub norm1_gain: Matrix,
    pub norm1_bias: Matrix,
    pub norm2_gain: Matrix,
    pub norm2_bias: Matrix,
}

/// All trainable weights plus the input-standardization statistics that
/// travel with checkpoints.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub cfg: ModelConfig,
    pub w_emb: Matrix,
    pub b_emb: Matrix,
    pub layers: Vec<EncoderLayerParams>,
    /// Head: time mixing, [N_P x N_L]. No bias.
    pub w_time: Matrix,
    /// Head: feature mixing, [d x 2RT]. No bias.
    pub w_channels: Matrix,
    /// Per-feature input mean (1 x 2RT), not trainable.
    pub input_mean: Matrix,
    /// Per-feature input std (1 x 2RT), not trainable.
    pub input_std: Matrix,
}

fn uniform_init<R: Rng>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Matrix {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
}

impl ModelParams {
    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (np, d, feat) = (cfg.n_past, cfg.d_model, cfg.feat_dim());
        let layers = (0..cfg.n_layers)
            .map(|_| {
                let mixer = match cfg.mixer {
                    MixerKind::Tmlp => MixerParams::Tmlp {
                        w1: uniform_init(np, np, np, rng),
                        b1: Matrix::zeros(1, np),
                        w2: uniform_init(np, np, np, rng),
                        b2: Matrix::zeros(1, np),
                    },
                    MixerKind::Attention => MixerParams::Attention {
                        wq: uniform_init(d, d, d, rng),
                        wk: uniform_init(d, d, d, rng),
                        wv: uniform_init(d, d, d, rng),
                        wo: uniform_init(d, d, d, rng),
                    },
                };
                EncoderLayerParams {
                    mixer,
                    ffn_w1: uniform_init(d, d, d, rng),
                    ffn_b1: Matrix::zeros(1, d),
                    ffn_w2: uniform_init(d, d, d, rng),
                    ffn_b2: Matrix::zeros(1, d),
                    norm1_gain: Matrix::from_vec(1, d, vec![1.0; d]),
                    norm1_bias: Matrix::zeros(1, d),
                    norm2_gain: Matrix::from_vec(1, d, vec![1.0; d]),
                    norm2_bias: Matrix::zeros(1, d),
                }
            })
            .collect();
        Ok(ModelParams {
            cfg: cfg.clone(),
            w_emb: uniform_init(feat, d, feat, rng),
            b_emb: Matrix::zeros(1, d),
            layers,
            w_time: uniform_init(np, cfg.n_future, np, rng),
            w_channels: uniform_init(d, feat, d, rng),
            input_mean: Matrix::zeros(1, feat),
            input_std: Matrix::from_vec(1, feat, vec![1.0; feat]),
        })
    }

    /// Visit every trainable matrix, in a stable order shared by the
    /// optimizer and the checkpoint format.
    pub fn visit_mut(&mut self, mut f: impl FnMut(String, &mut Matrix)) {
        f("w_emb".into(), &mut self.w_emb);
        f("b_emb".into(), &mut self.b_emb);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match &mut layer.mixer {
                MixerParams::Tmlp { w1, b1, w2, b2 } => {
                    f(format!("layer{}.tmlp.w1", i), w1);
                    f(format!("layer{}.tmlp.b1", i), b1);
                    f(format!("layer{}.tmlp.w2", i), w2);
                    f(format!("layer{}.tmlp.b2", i), b2);
                }
                MixerParams::Attention { wq, wk, wv, wo } => {
                    f(format!("layer{}.attn.wq", i), wq);
                    f(format!("layer{}.attn.wk", i), wk);
                    f(format!("layer{}.attn.wv", i), wv);
                    f(format!("layer{}.attn.wo", i), wo);
                }
            }
            f(format!("layer{}.ffn.w1", i), &mut layer.ffn_w1);
            f(format!("layer{}.ffn.b1", i), &mut layer.ffn_b1);
            f(format!("layer{}.ffn.w2", i), &mut layer.ffn_w2);
            f(format!("layer{}.ffn.b2", i), &mut layer.ffn_b2);
            f(format!("layer{}.norm1.gain", i), &mut layer.norm1_gain);
            f(format!("layer{}.norm1.bias", i), &mut layer.norm1_bias);
            f(format!("layer{}.norm2.gain", i), &mut layer.norm2_gain);
            f(format!("layer{}.norm2.bias", i), &mut layer.norm2_bias);
        }
        f("w_time".into(), &mut self.w_time);
        f("w_channels".into(), &mut self.w_channels);
    }

    pub fn named_trainable(&self) -> Vec<(String, Matrix)> {
        let mut out = Vec::new();
        let mut clone = self.clone();
        clone.visit_mut(|name, m| out.push((name, m.clone())));
        out
    }

    /// Total trainable scalar count.
    pub fn count_params(&self) -> usize {
        let mut total = 0;
        let mut clone = self.clone();
        clone.visit_mut(|_, m| total += m.len());
        total
    }
}

/// Parameter count of the separable head: N_P*N_L + 2*d*R*T.
pub fn head_param_count(cfg: &ModelConfig) -> usize {
    cfg.n_past * cfg.n_future + cfg.d_model * cfg.feat_dim()
}

/// Closed-form matmul multiplication counts for one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MultCounts {
    pub mixer_per_layer: u64,
    pub ffn_per_layer: u64,
    pub encoder: u64,
    pub head: u64,
    /// Embedding matmul; excluded from `total` (the encoder+head budget).
    pub embedding: u64,
    pub total: u64,
}

/// Multiplication budget of a forward pass, counting scalar multiplications
/// inside matrix products only. `total` covers encoder + head; the embedding
/// is reported separately.
pub fn count_mults(cfg: &ModelConfig) -> MultCounts {
    let n = cfg.n_past as u64;
    let d = cfg.d_model as u64;
    let nl = cfg.n_future as u64;
    let (r, t) = (cfg.r as u64, cfg.t as u64);
    let layers = cfg.n_layers as u64;

    let mixer_per_layer = match cfg.mixer {
        MixerKind::Tmlp => 2 * n * n * d,
        MixerKind::Attention => 4 * n * d * d + 2 * n * n * d,
    };
    let ffn_per_layer = 2 * n * d * d;
    let encoder = layers * (mixer_per_layer + ffn_per_layer);
    let head = n * nl * d + 2 * nl * r * t * d;
    let embedding = n * 2 * r * t * d;
    MultCounts {
        mixer_per_layer,
        ffn_per_layer,
        encoder,
        head,
        embedding,
        total: encoder + head,
    }
}

/// One recorded forward pass: output node, parameter node bindings for
/// gradient readout, and the tape mult tally split at the embedding.
pub struct Forward {
    pub output: NodeId,
    pub params: Vec<(String, NodeId)>,
    pub mults_embedding: u64,
    pub mults_core: u64,
}

/// Sinusoidal positional encoding for the attention baseline.
pub fn positional_encoding(n: usize, d: usize) -> Matrix {
    Matrix::from_fn(n, d, |pos, i| {
        let exponent = 2.0 * (i / 2) as f64 / d as f64;
        let angle = pos as f64 / 10_000f64.powf(exponent);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

fn affine_rows(tape: &mut Tape, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
    let prod = tape.matmul(x, w)?;
    tape.add_bias_row(prod, b)
}

/// O = (ReLU(X^T W1 + b1) W2 + b2)^T: mixing strictly along the time axis.
pub fn tmlp_forward(
    tape: &mut Tape,
    x: NodeId,
    w1: NodeId,
    b1: NodeId,
    w2: NodeId,
    b2: NodeId,
) -> Result<NodeId> {
    let xt = tape.transpose(x);
    let h = affine_rows(tape, xt, w1, b1)?;
    let a = tape.relu(h);
    let o = affine_rows(tape, a, w2, b2)?;
    Ok(tape.transpose(o))
}

/// Multi-head scaled dot-product self-attention with output projection.
pub fn attention_forward(
    tape: &mut Tape,
    x: NodeId,
    wq: NodeId,
    wk: NodeId,
    wv: NodeId,
    wo: NodeId,
    heads: usize,
) -> Result<NodeId> {
    let d = tape.shape(x).1;
    if d % heads != 0 {
        return Err(LabError::Shape(format!("d={} not divisible by {} heads", d, heads)));
    }
    let dk = d / heads;
    let q = tape.matmul(x, wq)?;
    let k = tape.matmul(x, wk)?;
    let v = tape.matmul(x, wv)?;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.col_slice(q, h * dk, dk)?;
        let kh = tape.col_slice(k, h * dk, dk)?;
        let vh = tape.col_slice(v, h * dk, dk)?;
        let kt = tape.transpose(kh);
        let scores = tape.matmul(qh, kt)?;
        let scaled = tape.scale(scores, 1.0 / (dk as f64).sqrt());
        let attn = tape.softmax_rows(scaled);
        outs.push(tape.matmul(attn, vh)?);
    }
    let cat = tape.concat_cols(&outs)?;
    tape.matmul(cat, wo)
}

/// FFN(x) = ReLU(x W_a + b_a) W_b + b_b, hidden width d.
fn ffn_forward(
    tape: &mut Tape,
    x: NodeId,
    w1: NodeId,
    b1: NodeId,
    w2: NodeId,
    b2: NodeId,
) -> Result<NodeId> {
    let h = affine_rows(tape, x, w1, b1)?;
    let a = tape.relu(h);
    affine_rows(tape, a, w2, b2)
}

struct Binder<'a> {
    tape: &'a mut Tape,
    bound: Vec<(String, NodeId)>,
}

impl<'a> Binder<'a> {
    fn bind(&mut self, name: &str, m: &Matrix) -> NodeId {
        let id = self.tape.leaf(m);
        self.bound.push((name.to_string(), id));
        id
    }
}

/// Full forward: standardize, embed, encoder stack, separable head.
/// `input` is the past feature matrix [N_P x 2RT].
pub fn forward(tape: &mut Tape, params: &ModelParams, input: &Matrix) -> Result<Forward> {
    let cfg = &params.cfg;
    cfg.validate()?;
    if input.rows != cfg.n_past || input.cols != cfg.feat_dim() {
        return Err(LabError::Shape(format!(
            "input {}x{}, expected {}x{}",
            input.rows,
            input.cols,
            cfg.n_past,
            cfg.feat_dim()
        )));
    }

    // Standardization: constant affine map, applied to inputs only.
    let standardized = Matrix::from_fn(input.rows, input.cols, |i, j| {
        (input.get(i, j) - params.input_mean.get(0, j)) / params.input_std.get(0, j)
    });

    let mut binder = Binder { tape, bound: Vec::new() };
    let x = binder.tape.leaf(&standardized);

    let w_emb = binder.bind("w_emb", &params.w_emb);
    let b_emb = binder.bind("b_emb", &params.b_emb);
    let mults_before = binder.tape.matmul_mults;
    let mut f = affine_rows(binder.tape, x, w_emb, b_emb)?;
    let mults_embedding = binder.tape.matmul_mults - mults_before;

    if cfg.mixer == MixerKind::Attention && cfg.use_pos_enc {
        let pe = positional_encoding(cfg.n_past, cfg.d_model);
        let pe_id = binder.tape.leaf(&pe);
        f = binder.tape.add(f, pe_id)?;
    }

    let core_start = binder.tape.matmul_mults;
    for (i, layer) in params.layers.iter().enumerate() {
        let mixed = match &layer.mixer {
            MixerParams::Tmlp { w1, b1, w2, b2 } => {
                let w1 = binder.bind(&format!("layer{}.tmlp.w1", i), w1);
                let b1 = binder.bind(&format!("layer{}.tmlp.b1", i), b1);
                let w2 = binder.bind(&format!("layer{}.tmlp.w2", i), w2);
                let b2 = binder.bind(&format!("layer{}.tmlp.b2", i), b2);
                tmlp_forward(binder.tape, f, w1, b1, w2, b2)?
            }
            MixerParams::Attention { wq, wk, wv, wo } => {
                let wq = binder.bind(&format!("layer{}.attn.wq", i), wq);
                let wk = binder.bind(&format!("layer{}.attn.wk", i), wk);
                let wv = binder.bind(&format!("layer{}.attn.wv", i), wv);
                let wo = binder.bind(&format!("layer{}.attn.wo", i), wo);
                attention_forward(binder.tape, f, wq, wk, wv, wo, cfg.heads)?
            }
        };
        // Post-norm residual ordering: Norm(sublayer(x) + x).
        let res1 = binder.tape.add(mixed, f)?;
        let g1 = binder.bind(&format!("layer{}.norm1.gain", i), &layer.norm1_gain);
        let bb1 = binder.bind(&format!("layer{}.norm1.bias", i), &layer.norm1_bias);
        let f1 = binder.tape.layer_norm(res1, g1, bb1, LAYER_NORM_EPS)?;

        let fw1 = binder.bind(&format!("layer{}.ffn.w1", i), &layer.ffn_w1);
        let fb1 = binder.bind(&format!("layer{}.ffn.b1", i), &layer.ffn_b1);
        let fw2 = binder.bind(&format!("layer{}.ffn.w2", i), &layer.ffn_w2);
        let fb2 = binder.bind(&format!("layer{}.ffn.b2", i), &layer.ffn_b2);
        let ffn = ffn_forward(binder.tape, f1, fw1, fb1, fw2, fb2)?;
        let res2 = binder.tape.add(ffn, f1)?;
        let g2 = binder.bind(&format!("layer{}.norm2.gain", i), &layer.norm2_gain);
        let bb2 = binder.bind(&format!("layer{}.norm2.bias", i), &layer.norm2_bias);
        f = binder.tape.layer_norm(res2, g2, bb2, LAYER_NORM_EPS)?;
    }

    // Head: (F^T W_time)^T W_channels.
    let w_time = binder.bind("w_time", &params.w_time);
    let w_channels = binder.bind("w_channels", &params.w_channels);
    let ft = binder.tape.transpose(f);
    let mixed_time = binder.tape.matmul(ft, w_time)?;
    let back = binder.tape.transpose(mixed_time);
    let output = binder.tape.matmul(back, w_channels)?;
    let mults_core = binder.tape.matmul_mults - core_start;

    Ok(Forward { output, params: binder.bound, mults_embedding, mults_core })
}

/// Head only, on a given representation node (used by oracle tests).
pub fn head_forward(tape: &mut Tape, f: NodeId, w_time: NodeId, w_channels: NodeId) -> Result<NodeId> {
    let ft = tape.transpose(f);
    let mixed = tape.matmul(ft, w_time)?;
    let back = tape.transpose(mixed);
    tape.matmul(back, w_channels)
}

/// Reparameterize a TMLP model so that feeding the row-permuted input
/// reproduces the original output exactly: forward(P X, params') = forward(X, params).
///
/// `perm[i]` is the source index of permuted row i, i.e. (P X)_i = X_{perm[i]}.
/// Features then travel in permuted time order through every layer (all other
/// blocks act per time step), so each TMLP gets W1 row-permuted, W2
/// column-permuted with its bias, and the head's W_time is row-permuted to
/// undo the order at the output.
pub fn permute_weights(params: &ModelParams, perm: &[usize]) -> Result<ModelParams> {
    if params.cfg.mixer != MixerKind::Tmlp {
        return Err(LabError::Config("permute_weights applies to the tmlp mixer only".into()));
    }
    let np = params.cfg.n_past;
    if perm.len() != np {
        return Err(LabError::Shape(format!("permutation of {} for N_P={}", perm.len(), np)));
    }
    let mut seen = vec![false; np];
    for &p in perm {
        if p >= np || seen[p] {
            return Err(LabError::Data("not a permutation".into()));
        }
        seen[p] = true;
    }

    let mut out = params.clone();
    for layer in &mut out.layers {
        if let MixerParams::Tmlp { w1, w2, b2, .. } = &mut layer.mixer {
            *w1 = Matrix::from_fn(np, np, |i, j| w1.get(perm[i], j));
            *w2 = Matrix::from_fn(np, np, |i, j| w2.get(i, perm[j]));
            *b2 = Matrix::from_fn(1, np, |_, j| b2.get(0, perm[j]));
        }
    }
    out.w_time = Matrix::from_fn(np, params.cfg.n_future, |i, j| params.w_time.get(perm[i], j));
    Ok(out)
}

/// Row-permute a matrix: out_i = x_{perm[i]}.
pub fn permute_rows(x: &Matrix, perm: &[usize]) -> Matrix {
    Matrix::from_fn(x.rows, x.cols, |i, j| x.get(perm[i], j))
}
