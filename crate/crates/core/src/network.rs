//! Recurrent residual U-Net: convolutional encoder with residual blocks, a
//! convLSTM unrolled over the deepest feature map, and one decoder shared
//! by all time steps.
//!
//! Tensors are `(n, c, h, w)` with `h = ny` and `w = nx`, so a flattened
//! channel matches the `j * nx + i` block ordering of the grid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{BnMode, Conv2dSpec, ParamStore, Tape, Tensor, Var};
use crate::geomodel::{GeoModel, WellSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinalActivation {
    Linear,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub input_channels: usize,
    pub base_filters: usize,
    pub n_t: usize,
    pub nx: usize,
    pub ny: usize,
    pub residual_blocks_enc: usize,
    pub residual_blocks_dec: usize,
    pub final_activation: FinalActivation,
    /// Batch normalization after every conv and transposed conv.
    #[serde(default = "default_true")]
    pub batchnorm: bool,
}

fn default_true() -> bool {
    true
}

impl ArchConfig {
    pub fn new(nx: usize, ny: usize, base_filters: usize, n_t: usize, final_activation: FinalActivation) -> Self {
        Self {
            input_channels: 2,
            base_filters,
            n_t,
            nx,
            ny,
            residual_blocks_enc: 3,
            residual_blocks_dec: 3,
            final_activation,
            batchnorm: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_filters < 4 {
            return Err(Error::invalid("base_filters must be at least 4"));
        }
        if self.nx < 4 || self.ny < 4 {
            return Err(Error::invalid("network grid needs at least 4 blocks per axis"));
        }
        if self.n_t == 0 || self.input_channels == 0 {
            return Err(Error::invalid("n_t and input_channels must be positive"));
        }
        Ok(())
    }

    /// Channel ladder `(b, 2b, 4b, 8b)`.
    pub fn channels(&self) -> [usize; 4] {
        let b = self.base_filters;
        [b, 2 * b, 4 * b, 8 * b]
    }

    /// Spatial size after the two stride-2 encoder stages.
    pub fn deep_hw(&self) -> (usize, usize) {
        (self.ny.div_ceil(2).div_ceil(2), self.nx.div_ceil(2).div_ceil(2))
    }
}

/// Encoder outputs. `skips[k]` is `F_{k+1}`.
#[derive(Debug, Clone, Copy)]
pub struct Features {
    pub skips: [Var; 4],
    pub deep: Var,
}

const GATES: [&str; 4] = ["f", "i", "o", "c"];

/// Parameters plus the architecture that shaped them.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentRUNet {
    pub arch: ArchConfig,
    pub params: ParamStore,
}

struct Builder<'a> {
    store: ParamStore,
    rng: ChaCha8Rng,
    arch: &'a ArchConfig,
}

impl Builder<'_> {
    fn kernel(&mut self, name: &str, shape: [usize; 4], fan_in: usize, gain: f64) -> Result<()> {
        let std = (gain / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
        let len = shape.iter().product();
        let data = (0..len).map(|_| normal.sample(&mut self.rng)).collect();
        self.store.add(name, Tensor::from_vec(shape, data)?, true)?;
        Ok(())
    }

    fn zeros(&mut self, name: &str, c: usize) -> Result<()> {
        self.store.add(name, Tensor::zeros([c, 1, 1, 1]), true)?;
        Ok(())
    }

    fn bn(&mut self, prefix: &str, c: usize) -> Result<()> {
        if !self.arch.batchnorm {
            return Ok(());
        }
        self.store.add(format!("{prefix}.bn.gamma"), Tensor::filled([c, 1, 1, 1], 1.0), true)?;
        self.store.add(format!("{prefix}.bn.beta"), Tensor::zeros([c, 1, 1, 1]), true)?;
        self.store.add(format!("{prefix}.bn.mean"), Tensor::zeros([c, 1, 1, 1]), false)?;
        self.store.add(format!("{prefix}.bn.var"), Tensor::filled([c, 1, 1, 1], 1.0), false)?;
        Ok(())
    }

    fn conv_bn(&mut self, prefix: &str, ci: usize, co: usize) -> Result<()> {
        self.kernel(&format!("{prefix}.w"), [co, ci, 3, 3], ci * 9, 2.0)?;
        self.zeros(&format!("{prefix}.b"), co)?;
        self.bn(prefix, co)
    }

    fn tconv_bn(&mut self, prefix: &str, ci: usize, co: usize) -> Result<()> {
        self.kernel(&format!("{prefix}.w"), [ci, co, 3, 3], ci * 9, 2.0)?;
        self.zeros(&format!("{prefix}.b"), co)?;
        self.bn(prefix, co)
    }

    fn residual(&mut self, prefix: &str, c: usize) -> Result<()> {
        self.conv_bn(&format!("{prefix}.conv1"), c, c)?;
        self.conv_bn(&format!("{prefix}.conv2"), c, c)
    }
}

impl RecurrentRUNet {
    /// Fresh network with fan-in scaled normal kernels, zero biases, unit
    /// gamma and zero beta.
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let [c1, c2, c3, c4] = arch.channels();
        let mut b = Builder { store: ParamStore::new(), rng: ChaCha8Rng::seed_from_u64(seed), arch: &arch };
        b.conv_bn("enc.conv1", arch.input_channels, c1)?;
        b.conv_bn("enc.conv2", c1, c2)?;
        b.conv_bn("enc.conv3", c2, c3)?;
        b.conv_bn("enc.conv4", c3, c4)?;
        for r in 0..arch.residual_blocks_enc {
            b.residual(&format!("enc.res{r}"), c4)?;
        }
        for g in GATES {
            b.kernel(&format!("lstm.wx{g}"), [c4, c4, 3, 3], c4 * 9, 1.0)?;
            b.kernel(&format!("lstm.wh{g}"), [c4, c4, 3, 3], c4 * 9, 1.0)?;
            b.zeros(&format!("lstm.b{g}"), c4)?;
        }
        for r in 0..arch.residual_blocks_dec {
            b.residual(&format!("dec.res{r}"), c4)?;
        }
        // each transposed conv sees the stream concatenated with a skip
        b.tconv_bn("dec.tconv1", c4 + c4, c4)?;
        b.tconv_bn("dec.tconv2", c4 + c3, c3)?;
        b.tconv_bn("dec.tconv3", c3 + c2, c2)?;
        b.tconv_bn("dec.tconv4", c2 + c1, c1)?;
        b.kernel("out.w", [1, c1, 3, 3], c1 * 9, 1.0)?;
        b.zeros("out.b", 1)?;
        let params = b.store;
        Ok(Self { arch, params })
    }

    pub fn trainable_count(&self) -> usize {
        self.params.trainable_count()
    }

    fn bn_relu(&self, t: &mut Tape, x: Var, prefix: &str, mode: BnMode) -> Result<Var> {
        let x = if self.arch.batchnorm {
            let g = t.param_named(&format!("{prefix}.bn.gamma"))?;
            let b = t.param_named(&format!("{prefix}.bn.beta"))?;
            let store = t.store();
            let mean = store.id(&format!("{prefix}.bn.mean")).expect("bn buffers exist");
            let var = store.id(&format!("{prefix}.bn.var")).expect("bn buffers exist");
            t.batch_norm(x, g, b, mean, var, mode)?
        } else {
            x
        };
        Ok(t.relu(x))
    }

    fn conv(&self, t: &mut Tape, x: Var, prefix: &str, stride: usize) -> Result<Var> {
        let w = t.param_named(&format!("{prefix}.w"))?;
        let b = t.param_named(&format!("{prefix}.b"))?;
        t.conv2d(x, w, Some(b), Conv2dSpec::k3(stride))
    }

    fn conv_block(&self, t: &mut Tape, x: Var, prefix: &str, stride: usize, mode: BnMode) -> Result<Var> {
        let y = self.conv(t, x, prefix, stride)?;
        self.bn_relu(t, y, prefix, mode)
    }

    /// `x + BN(conv2(ReLU(BN(conv1(x)))))`.
    fn residual(&self, t: &mut Tape, x: Var, prefix: &str, mode: BnMode) -> Result<Var> {
        let h = self.conv_block(t, x, &format!("{prefix}.conv1"), 1, mode)?;
        let p2 = format!("{prefix}.conv2");
        let mut y = self.conv(t, h, &p2, 1)?;
        if self.arch.batchnorm {
            let g = t.param_named(&format!("{p2}.bn.gamma"))?;
            let b = t.param_named(&format!("{p2}.bn.beta"))?;
            let store = t.store();
            let mean = store.id(&format!("{p2}.bn.mean")).expect("bn buffers exist");
            let var = store.id(&format!("{p2}.bn.var")).expect("bn buffers exist");
            y = t.batch_norm(y, g, b, mean, var, mode)?;
        }
        t.add(x, y)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let [_, c, h, w] = x.shape();
        if c != self.arch.input_channels || h != self.arch.ny || w != self.arch.nx {
            return Err(Error::shape(format!(
                "network expects (n, {}, {}, {}), got {:?}",
                self.arch.input_channels,
                self.arch.ny,
                self.arch.nx,
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn encode(&self, t: &mut Tape, x: Var, mode: BnMode) -> Result<Features> {
        self.check_input(t.value(x))?;
        let f1 = self.conv_block(t, x, "enc.conv1", 2, mode)?;
        let f2 = self.conv_block(t, f1, "enc.conv2", 1, mode)?;
        let f3 = self.conv_block(t, f2, "enc.conv3", 2, mode)?;
        let f4 = self.conv_block(t, f3, "enc.conv4", 1, mode)?;
        let mut deep = f4;
        for r in 0..self.arch.residual_blocks_enc {
            deep = self.residual(t, deep, &format!("enc.res{r}"), mode)?;
        }
        Ok(Features { skips: [f1, f2, f3, f4], deep })
    }

    /// Input-side gate pre-activations `W_x * chi + b`, one per gate.
    pub fn lstm_input_terms(&self, t: &mut Tape, chi: Var) -> Result<[Var; 4]> {
        let mut out = Vec::with_capacity(4);
        for g in GATES {
            let w = t.param_named(&format!("lstm.wx{g}"))?;
            let b = t.param_named(&format!("lstm.b{g}"))?;
            out.push(t.conv2d(chi, w, Some(b), Conv2dSpec::k3(1))?);
        }
        Ok([out[0], out[1], out[2], out[3]])
    }

    /// One convLSTM step. `state` is `(H, C)` from the previous step, `None`
    /// for the zero initial state. Returns the new `(H, C)`.
    pub fn lstm_step(&self, t: &mut Tape, input_terms: &[Var; 4], state: Option<(Var, Var)>) -> Result<(Var, Var)> {
        let mut pre = [input_terms[0]; 4];
        for (k, g) in GATES.iter().enumerate() {
            pre[k] = match state {
                Some((h, _)) => {
                    let w = t.param_named(&format!("lstm.wh{g}"))?;
                    let hh = t.conv2d(h, w, None, Conv2dSpec::k3(1))?;
                    t.add(input_terms[k], hh)?
                }
                None => input_terms[k],
            };
        }
        let f = t.sigmoid(pre[0]);
        let i = t.sigmoid(pre[1]);
        let o = t.sigmoid(pre[2]);
        let cand = t.tanh(pre[3]);
        let ic = t.mul(i, cand)?;
        let c = match state {
            Some((_, c_prev)) => {
                let fc = t.mul(f, c_prev)?;
                t.add(fc, ic)?
            }
            None => ic,
        };
        let tc = t.tanh(c);
        let h = t.mul(o, tc)?;
        debug_assert!(t.value(h).data().iter().all(|v| v.abs() < 1.0));
        Ok((h, c))
    }

    /// Unrolls the convLSTM `n_t` steps from a zero state with static input.
    pub fn unroll(&self, t: &mut Tape, deep: Var, n_t: usize) -> Result<Vec<Var>> {
        let terms = self.lstm_input_terms(t, deep)?;
        let mut state = None;
        let mut out = Vec::with_capacity(n_t);
        for _ in 0..n_t {
            let (h, c) = self.lstm_step(t, &terms, state)?;
            out.push(h);
            state = Some((h, c));
        }
        Ok(out)
    }

    /// Decodes time-major stacked deep features `(reps * n, ...)`; skips are
    /// tiled `reps` times.
    pub fn decode(&self, t: &mut Tape, stacked: Var, feats: &Features, reps: usize, mode: BnMode) -> Result<Var> {
        let mut s = stacked;
        for r in 0..self.arch.residual_blocks_dec {
            s = self.residual(t, s, &format!("dec.res{r}"), mode)?;
        }
        let strides = [1, 2, 1, 2];
        let skip_order = [3, 2, 1, 0];
        for (k, (&stride, &skip)) in strides.iter().zip(&skip_order).enumerate() {
            let sk = if reps == 1 { feats.skips[skip] } else { t.tile_n(feats.skips[skip], reps)? };
            let cat = t.concat_channels(s, sk)?;
            // stride-2 layers restore the size of the next shallower level
            let target = if stride == 1 {
                (t.value(s).h(), t.value(s).w())
            } else if skip == 0 {
                (self.arch.ny, self.arch.nx)
            } else {
                let v = t.value(feats.skips[skip - 1]);
                (v.h(), v.w())
            };
            let prefix = format!("dec.tconv{}", k + 1);
            let w = t.param_named(&format!("{prefix}.w"))?;
            let b = t.param_named(&format!("{prefix}.b"))?;
            let y = t.conv_transpose2d(cat, w, Some(b), Conv2dSpec::k3(stride), target)?;
            s = self.bn_relu(t, y, &prefix, mode)?;
        }
        let y = self.conv(t, s, "out", 1)?;
        Ok(match self.arch.final_activation {
            FinalActivation::Linear => y,
            FinalActivation::Sigmoid => t.sigmoid(y),
        })
    }

    /// Full forward pass. Output is `(n_t * n, 1, ny, nx)` ordered time-major:
    /// row `t * n + i` is sample `i` at step `t`.
    pub fn forward(&self, t: &mut Tape, input: Var, mode: BnMode) -> Result<Var> {
        let feats = self.encode(t, input, mode)?;
        let seq = self.unroll(t, feats.deep, self.arch.n_t)?;
        let stacked = if seq.len() == 1 { seq[0] } else { t.stack_n(&seq)? };
        self.decode(t, stacked, &feats, self.arch.n_t, mode)
    }

    /// Inference with running batch-norm statistics. Returns per sample, per
    /// step, a flattened map.
    pub fn predict(&self, input: &Tensor) -> Result<Vec<Vec<Vec<f64>>>> {
        let mut tape = Tape::new(&self.params);
        let x = tape.leaf(input.clone());
        let y = self.forward(&mut tape, x, BnMode::Eval)?;
        Ok(split_time_major(tape.value(y), input.n(), self.arch.n_t))
    }
}

/// Splits a time-major `(n_t * n, 1, h, w)` tensor into `[sample][step][block]`.
pub fn split_time_major(y: &Tensor, n: usize, n_t: usize) -> Vec<Vec<Vec<f64>>> {
    let per = y.c() * y.h() * y.w();
    (0..n).map(|i| (0..n_t).map(|t| y.data()[(t * n + i) * per..(t * n + i + 1) * per].to_vec()).collect()).collect()
}

/// Standardization of `log10(k)` fitted on training models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputTransform {
    pub mean: f64,
    pub std: f64,
}

impl InputTransform {
    pub fn fit(models: &[GeoModel]) -> Result<Self> {
        let vals: Vec<f64> = models.iter().flat_map(|m| m.perm.iter().map(|k| k.log10())).collect();
        if vals.is_empty() {
            return Err(Error::invalid("cannot fit input transform on no models"));
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Ok(Self { mean, std })
    }

    /// Two-channel input: normalized log-permeability and a well mask.
    pub fn inputs(&self, models: &[&GeoModel], wells: &[WellSpec]) -> Result<Tensor> {
        let first = models.first().ok_or_else(|| Error::invalid("no models to encode"))?;
        let grid = first.grid;
        let n_b = grid.n_blocks();
        let mut mask = vec![0.0; n_b];
        for w in wells {
            mask[w.block(&grid)] = 1.0;
        }
        let mut data = Vec::with_capacity(models.len() * 2 * n_b);
        for m in models {
            if m.grid != grid {
                return Err(Error::shape("models in one batch must share a grid"));
            }
            data.extend(m.perm.iter().map(|k| (k.log10() - self.mean) / self.std));
            data.extend_from_slice(&mask);
        }
        Tensor::from_vec([models.len(), 2, grid.ny, grid.nx], data)
    }
}
