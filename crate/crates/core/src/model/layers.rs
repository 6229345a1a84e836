use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelError;
use crate::autodiff::{matmul_raw, xavier_init, AutodiffError, ParamId, ParamStore, Tape, Tensor, Var};

fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Registers a Xavier-initialised parameter. Each name draws from its own
/// stream, so a parameter's initial value does not depend on which other
/// parameters exist.
pub(crate) fn init_param(store: &mut ParamStore<f64>, seed: u64, name: &str, shape: &[usize]) -> Result<ParamId, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name));
    let t = xavier_init(shape, &mut rng)?.with_trainable(true);
    Ok(store.insert(name, t)?)
}

/// Stacked embedding table where each field's block of rows is Xavier
/// initialised with that field's own fans.
pub(crate) fn init_embedding(
    store: &mut ParamStore<f64>,
    seed: u64,
    name: &str,
    vocabs: &[usize],
    e: usize,
) -> Result<ParamId, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name));
    let mut data = Vec::with_capacity(vocabs.iter().sum::<usize>() * e);
    for &v in vocabs {
        data.extend_from_slice(xavier_init::<f64, _>(&[v, e], &mut rng)?.data());
    }
    let t = Tensor::new(&[vocabs.iter().sum(), e], data)?.with_trainable(true);
    Ok(store.insert(name, t)?)
}

pub(crate) fn zero_param(store: &mut ParamStore<f64>, name: &str, shape: &[usize]) -> Result<ParamId, ModelError> {
    Ok(store.insert(name, Tensor::zeros(shape)?.with_trainable(true))?)
}

/// Affine map `x W + b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new(store: &mut ParamStore<f64>, seed: u64, name: &str, inp: usize, out: usize) -> Result<Self, ModelError> {
        Ok(Self {
            weight: init_param(store, seed, &format!("{name}.weight"), &[inp, out])?,
            bias: zero_param(store, &format!("{name}.bias"), &[out])?,
        })
    }

    pub fn apply(&self, tape: &mut Tape<f64>, store: &ParamStore<f64>, x: Var) -> Result<Var, AutodiffError> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let h = tape.matmul(x, w)?;
        tape.add(h, b)
    }
}

/// Gate network: `2 σ(fc1(leaky(fc0(x))))`, hidden width equal to the
/// output width.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GateNu {
    pub fc0: Dense,
    pub fc1: Dense,
}

impl GateNu {
    pub fn new(store: &mut ParamStore<f64>, seed: u64, name: &str, inp: usize, out: usize) -> Result<Self, ModelError> {
        Ok(Self {
            fc0: Dense::new(store, seed, &format!("{name}.fc0"), inp, out)?,
            fc1: Dense::new(store, seed, &format!("{name}.fc1"), out, out)?,
        })
    }

    pub fn apply(&self, tape: &mut Tape<f64>, store: &ParamStore<f64>, x: Var, slope: f64) -> Result<Var, AutodiffError> {
        let h = self.fc0.apply(tape, store, x)?;
        let h = tape.leaky_relu(h, slope)?;
        let z = self.fc1.apply(tape, store, h)?;
        let s = tape.sigmoid(z);
        Ok(tape.scale(s, 2.0))
    }
}

/// Leaky-ReLU hidden layers followed by a single-logit output layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mlp {
    pub hidden: Vec<Dense>,
    pub out: Dense,
}

impl Mlp {
    pub fn new(store: &mut ParamStore<f64>, seed: u64, name: &str, inp: usize, hidden: &[usize]) -> Result<Self, ModelError> {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut width = inp;
        for (l, &h) in hidden.iter().enumerate() {
            layers.push(Dense::new(store, seed, &format!("{name}.hidden{l}"), width, h)?);
            width = h;
        }
        Ok(Self {
            hidden: layers,
            out: Dense::new(store, seed, &format!("{name}.out"), width, 1)?,
        })
    }

    /// Pre-activation output logit, `n x 1`.
    pub fn logit(&self, tape: &mut Tape<f64>, store: &ParamStore<f64>, x: Var, slope: f64) -> Result<Var, AutodiffError> {
        let mut h = x;
        for d in &self.hidden {
            let z = d.apply(tape, store, h)?;
            h = tape.leaky_relu(z, slope)?;
        }
        self.out.apply(tape, store, h)
    }
}

/// Low-rank update `ΔW = B A` on a `d x k` table; `B` is `d x r` and starts
/// at zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LoraAdapter {
    pub a: ParamId,
    pub b: ParamId,
    pub rank: usize,
}

impl LoraAdapter {
    pub fn new(store: &mut ParamStore<f64>, seed: u64, name: &str, d: usize, k: usize, rank: usize) -> Result<Self, ModelError> {
        if rank == 0 || 2 * rank > d.min(k) {
            return Err(ModelError::InvalidConfig(format!(
                "lora rank {rank} exceeds half of min({d}, {k})"
            )));
        }
        Ok(Self {
            a: init_param(store, seed, &format!("{name}.A"), &[rank, k])?,
            b: zero_param(store, &format!("{name}.B"), &[d, rank])?,
            rank,
        })
    }

    /// Rows `idx` of `W + B A`, with `w_rows` already gathered from `W`.
    pub fn adapt_rows(
        &self,
        tape: &mut Tape<f64>,
        store: &ParamStore<f64>,
        w_rows: Var,
        idx: &[usize],
    ) -> Result<Var, AutodiffError> {
        let b = tape.param(store, self.b);
        let a = tape.param(store, self.a);
        let br = tape.gather_rows(b, idx)?;
        let delta = tape.matmul(br, a)?;
        tape.add(w_rows, delta)
    }
}

/// `W + B A` as a plain matrix.
pub fn lora_effective_weight(w: &Tensor<f64>, b: &Tensor<f64>, a: &Tensor<f64>) -> Result<Tensor<f64>, AutodiffError> {
    let (d, k) = w.dims2();
    let (bd, r) = b.dims2();
    let (ar, ak) = a.dims2();
    if bd != d || ar != r || ak != k {
        return Err(AutodiffError::ShapeMismatch {
            op: "lora_effective_weight",
            lhs: (bd, r),
            rhs: (ar, ak),
        });
    }
    let ba = matmul_raw(b.data(), a.data(), d, r, k);
    let data = w.data().iter().zip(&ba).map(|(x, y)| x + y).collect();
    Tensor::new(&[d, k], data)
}
