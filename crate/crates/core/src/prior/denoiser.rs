//! Temporal transformer that predicts clean motion from noised motion.
//!
//! The network output `F` is wrapped as
//! `D(x_t, t) = c_skip x_t + c_out F(c_in x_t, t)` with
//! `c_in = 1 / sqrt(ab sd^2 + 1 - ab)`,
//! `c_skip = sqrt(ab) sd^2 / (ab sd^2 + 1 - ab)` and
//! `c_out = sqrt(1 - ab) sd / sqrt(ab sd^2 + 1 - ab)`, where `ab` is the
//! cumulative alpha at `t` and `sd` the RMS of the normalized training
//! motion. `D` remains an x0 prediction; the wrapper only keeps the
//! network's target at unit scale for every step.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::nn::{
    attention_backward, attention_forward, gelu, gelu_grad, silu, silu_grad, sinusoid, Layout, LayerNorm, Linear,
    Scalar, TensorEntry,
};
use super::schedule::NoiseSchedule;
use crate::binio::{self, Reader, Writer};
use crate::error::{Error, Result};
use crate::motion::MotionSequence;
use crate::skeleton::WHOLE_BODY_JOINTS;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EGDM";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const POSE_DIM: usize = 3 * WHOLE_BODY_JOINTS;
pub const WINDOW: usize = 196;
/// Floor on per-dimension normalization std, in meters.
pub const STD_FLOOR: f64 = 0.01;
/// Taps of the per-coordinate temporal filter added to the output.
pub const FILTER_KERNEL: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub ffn: usize,
    pub window: usize,
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            layers: 4,
            width: 256,
            heads: 4,
            ffn: 512,
            window: WINDOW,
            steps: 1000,
            beta_min: 1e-4,
            beta_max: 0.02,
            seed: 0,
        }
    }
}

impl DenoiserConfig {
    pub fn check(&self) -> Result<()> {
        if self.layers == 0 || self.width == 0 || self.heads == 0 || self.ffn == 0 || self.window == 0 {
            return Err(Error::Config("denoiser sizes must be positive".into()));
        }
        if self.width % self.heads != 0 || self.width % 2 != 0 {
            return Err(Error::Config(format!(
                "width {} must be even and divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        super::schedule::make_schedule(self.steps, self.beta_min, self.beta_max)
    }
}

#[derive(Debug, Clone)]
struct Block {
    ln1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    /// Step-dependent scale and shift for both norms (FiLM).
    film: Linear,
}

/// Parameter layout and forward/backward passes of the transformer.
#[derive(Debug, Clone)]
pub struct Network {
    pub dim: usize,
    pub width: usize,
    pub heads: usize,
    pub ffn: usize,
    input: Linear,
    time1: Linear,
    time2: Linear,
    blocks: Vec<Block>,
    ln_out: LayerNorm,
    film_out: Linear,
    output: Linear,
    /// Step-dependent taps of a depthwise temporal filter on the input,
    /// added to the output (a learned per-coordinate smoother).
    filter: Linear,
    /// Per-head locality slopes: 1, 1/4, 1/16, ... with the last head global.
    slopes: Vec<f64>,
    pub layout: Layout,
}

#[derive(Debug, Clone, Default)]
struct BlockCache<S> {
    x: Vec<S>,
    a: Vec<S>,
    a_stats: Vec<S>,
    af: Vec<S>,
    film: Vec<S>,
    qkv: Vec<S>,
    probs: Vec<S>,
    att: Vec<S>,
    mid: Vec<S>,
    b: Vec<S>,
    b_stats: Vec<S>,
    bf: Vec<S>,
    f1: Vec<S>,
    f1a: Vec<S>,
}

/// Activations of one forward pass, reused across calls of equal length.
#[derive(Debug, Clone)]
pub struct Cache<S> {
    n: usize,
    pe: Vec<S>,
    x: Vec<S>,
    t_in: Vec<S>,
    t_h: Vec<S>,
    t_a: Vec<S>,
    temb: Vec<S>,
    t_act: Vec<S>,
    blocks: Vec<BlockCache<S>>,
    last: Vec<S>,
    z: Vec<S>,
    z_stats: Vec<S>,
    zf: Vec<S>,
    film_out: Vec<S>,
    taps: Vec<S>,
    pub out: Vec<S>,
}

impl Network {
    pub fn new(dim: usize, width: usize, heads: usize, ffn: usize, layers: usize) -> Self {
        let mut layout = Layout::default();
        let input = layout.linear("input", dim, width);
        let time1 = layout.linear("time.0", width, width);
        let time2 = layout.linear("time.1", width, width);
        let blocks = (0..layers)
            .map(|l| Block {
                ln1: layout.layer_norm(&format!("block{l}.ln1"), width),
                qkv: layout.linear(&format!("block{l}.qkv"), width, 3 * width),
                proj: layout.linear(&format!("block{l}.proj"), width, width),
                ln2: layout.layer_norm(&format!("block{l}.ln2"), width),
                fc1: layout.linear(&format!("block{l}.fc1"), width, ffn),
                fc2: layout.linear(&format!("block{l}.fc2"), ffn, width),
                film: layout.linear(&format!("block{l}.film"), width, 4 * width),
            })
            .collect();
        let ln_out = layout.layer_norm("ln_out", width);
        let film_out = layout.linear("film_out", width, 2 * width);
        let filter = layout.linear("filter", width, dim * FILTER_KERNEL);
        let output = layout.linear("output", width, dim);
        Network {
            dim,
            width,
            heads,
            ffn,
            input,
            time1,
            time2,
            blocks,
            ln_out,
            film_out,
            output,
            filter,
            slopes: (0..heads)
                .map(|h| if h + 1 == heads { 0.0 } else { 0.25f64.powi(h as i32) })
                .collect(),
            layout,
        }
    }

    pub fn n_params(&self) -> usize {
        self.layout.len
    }

    /// Gaussian weights scaled by `1/sqrt(fan_in)`, residual branches shrunk
    /// by depth, unit gains, zero biases, zero FiLM and a zero output layer.
    pub fn init<S: Scalar, R: Rng>(&self, rng: &mut R) -> Vec<S> {
        let mut p = vec![S::zero(); self.n_params()];
        let depth_scale = 1.0 / (2.0 * self.blocks.len() as f64).sqrt();
        let mut fill = |p: &mut Vec<S>, l: &Linear, scale: f64| {
            let std = scale / (l.din as f64).sqrt();
            for v in &mut p[l.w..l.w + l.din * l.dout] {
                let z: f64 = StandardNormal.sample(rng);
                *v = S::of(z * std);
            }
        };
        fill(&mut p, &self.input, 1.0);
        fill(&mut p, &self.time1, 1.0);
        fill(&mut p, &self.time2, 1.0);
        for b in &self.blocks {
            fill(&mut p, &b.qkv, 1.0);
            fill(&mut p, &b.proj, depth_scale);
            fill(&mut p, &b.fc1, 1.0);
            fill(&mut p, &b.fc2, depth_scale);
            for ln in [&b.ln1, &b.ln2] {
                p[ln.g..ln.g + ln.dim].fill(S::one());
            }
        }
        p[self.ln_out.g..self.ln_out.g + self.width].fill(S::one());
        p
    }

    pub fn cache<S: Scalar>(&self, n: usize) -> Cache<S> {
        let w = self.width;
        let mut pe = vec![S::zero(); n * w];
        for (pos, row) in pe.chunks_exact_mut(w).enumerate() {
            sinusoid(pos as f64, w, row);
        }
        let block = BlockCache {
            x: vec![S::zero(); n * w],
            a: vec![S::zero(); n * w],
            a_stats: vec![S::zero(); 2 * n],
            af: vec![S::zero(); n * w],
            film: vec![S::zero(); 4 * w],
            qkv: vec![S::zero(); n * 3 * w],
            probs: vec![S::zero(); self.heads * n * n],
            att: vec![S::zero(); n * w],
            mid: vec![S::zero(); n * w],
            b: vec![S::zero(); n * w],
            b_stats: vec![S::zero(); 2 * n],
            bf: vec![S::zero(); n * w],
            f1: vec![S::zero(); n * self.ffn],
            f1a: vec![S::zero(); n * self.ffn],
        };
        Cache {
            n,
            pe,
            x: vec![S::zero(); n * self.dim],
            t_in: vec![S::zero(); w],
            t_h: vec![S::zero(); w],
            t_a: vec![S::zero(); w],
            temb: vec![S::zero(); w],
            t_act: vec![S::zero(); w],
            blocks: vec![block; self.blocks.len()],
            last: vec![S::zero(); n * w],
            z: vec![S::zero(); n * w],
            z_stats: vec![S::zero(); 2 * n],
            zf: vec![S::zero(); n * w],
            film_out: vec![S::zero(); 2 * w],
            taps: vec![S::zero(); self.dim * FILTER_KERNEL],
            out: vec![S::zero(); n * self.dim],
        }
    }

    /// Runs the network on `x` (`n x dim`) at embedding position `t` (see
    /// [`noise_position`]); the result is left in `cache.out`.
    pub fn forward<S: Scalar>(&self, p: &[S], x: &[S], t: f64, cache: &mut Cache<S>) {
        let (n, w) = (cache.n, self.width);
        assert_eq!(x.len(), n * self.dim, "input length");
        let dim = self.dim;
        cache.x.copy_from_slice(x);
        sinusoid(t, w, &mut cache.t_in);
        self.time1.forward(p, &cache.t_in, 1, &mut cache.t_h);
        for (a, h) in cache.t_a.iter_mut().zip(&cache.t_h) {
            *a = silu(*h);
        }
        self.time2.forward(p, &cache.t_a, 1, &mut cache.temb);
        for (a, e) in cache.t_act.iter_mut().zip(&cache.temb) {
            *a = silu(*e);
        }

        let mut h = std::mem::take(&mut cache.last);
        self.input.forward(p, &cache.x, n, &mut h);
        for (r, row) in h.chunks_exact_mut(w).enumerate() {
            for k in 0..w {
                row[k] += cache.pe[r * w + k] + cache.temb[k];
            }
        }
        let mut scratch = vec![S::zero(); n * w];
        for (blk, bc) in self.blocks.iter().zip(cache.blocks.iter_mut()) {
            bc.x.copy_from_slice(&h);
            blk.ln1.forward(p, &bc.x, n, &mut bc.a, &mut bc.a_stats);
            blk.film.forward(p, &cache.t_act, 1, &mut bc.film);
            modulate(&bc.a, &bc.film[..2 * w], &mut bc.af);
            blk.qkv.forward(p, &bc.af, n, &mut bc.qkv);
            attention_forward(&bc.qkv, n, w, self.heads, &self.slopes, &mut bc.probs, &mut bc.att);
            blk.proj.forward(p, &bc.att, n, &mut scratch);
            for ((m, x), o) in bc.mid.iter_mut().zip(&bc.x).zip(&scratch) {
                *m = *x + *o;
            }
            blk.ln2.forward(p, &bc.mid, n, &mut bc.b, &mut bc.b_stats);
            modulate(&bc.b, &bc.film[2 * w..], &mut bc.bf);
            blk.fc1.forward(p, &bc.bf, n, &mut bc.f1);
            for (a, f) in bc.f1a.iter_mut().zip(&bc.f1) {
                *a = gelu(*f);
            }
            blk.fc2.forward(p, &bc.f1a, n, &mut scratch);
            for ((o, m), f) in h.iter_mut().zip(&bc.mid).zip(&scratch) {
                *o = *m + *f;
            }
        }
        cache.last = h;
        self.ln_out.forward(p, &cache.last, n, &mut cache.z, &mut cache.z_stats);
        self.film_out.forward(p, &cache.t_act, 1, &mut cache.film_out);
        modulate(&cache.z, &cache.film_out, &mut cache.zf);
        self.output.forward(p, &cache.zf, n, &mut cache.out);
        self.filter.forward(p, &cache.t_act, 1, &mut cache.taps);
        let half = FILTER_KERNEL / 2;
        for r in 0..n {
            for k in 0..FILTER_KERNEL {
                let src = (r + k).saturating_sub(half).min(n - 1);
                let (o, xs) = (&mut cache.out[r * dim..(r + 1) * dim], &cache.x[src * dim..(src + 1) * dim]);
                for c in 0..dim {
                    o[c] += cache.taps[c * FILTER_KERNEL + k] * xs[c];
                }
            }
        }
    }

    /// Accumulates parameter gradients for output gradient `dout`.
    pub fn backward<S: Scalar>(&self, p: &[S], cache: &Cache<S>, dout: &[S], g: &mut [S]) {
        let (n, w) = (cache.n, self.width);
        let mut dzf = vec![S::zero(); n * w];
        self.output.backward(p, g, &cache.zf, dout, n, Some(&mut dzf));
        let mut dz = vec![S::zero(); n * w];
        let mut dfilm = vec![S::zero(); 4 * w];
        let mut dact = vec![S::zero(); w];
        let mut tmp_w = vec![S::zero(); w];
        let dim = self.dim;
        let mut dtaps = vec![S::zero(); dim * FILTER_KERNEL];
        let half = FILTER_KERNEL / 2;
        for r in 0..n {
            for k in 0..FILTER_KERNEL {
                let src = (r + k).saturating_sub(half).min(n - 1);
                for c in 0..dim {
                    dtaps[c * FILTER_KERNEL + k] += dout[r * dim + c] * cache.x[src * dim + c];
                }
            }
        }
        self.filter.backward(p, g, &cache.t_act, &dtaps, 1, Some(&mut tmp_w));
        add_into(&mut dact, &tmp_w);
        modulate_backward(&cache.z, &cache.film_out, &dzf, &mut dz, &mut dfilm[..2 * w]);
        self.film_out.backward(p, g, &cache.t_act, &dfilm[..2 * w], 1, Some(&mut tmp_w));
        add_into(&mut dact, &tmp_w);
        let mut dh = vec![S::zero(); n * w];
        self.ln_out.backward(p, g, &cache.last, &cache.z_stats, &dz, n, &mut dh);

        let mut dmid = vec![S::zero(); n * w];
        let mut dffn = vec![S::zero(); n * self.ffn];
        let mut dtmp = vec![S::zero(); n * w];
        let mut dqkv = vec![S::zero(); n * 3 * w];
        let mut dmod = vec![S::zero(); n * w];
        let mut scratch = Vec::new();
        for (blk, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            dmid.copy_from_slice(&dh);
            blk.fc2.backward(p, g, &bc.f1a, &dh, n, Some(&mut dffn));
            for (d, f) in dffn.iter_mut().zip(&bc.f1) {
                *d = *d * gelu_grad(*f);
            }
            blk.fc1.backward(p, g, &bc.bf, &dffn, n, Some(&mut dtmp));
            modulate_backward(&bc.b, &bc.film[2 * w..], &dtmp, &mut dmod, &mut dfilm[2 * w..]);
            blk.ln2.backward(p, g, &bc.mid, &bc.b_stats, &dmod, n, &mut dmid);

            dh.copy_from_slice(&dmid);
            blk.proj.backward(p, g, &bc.att, &dmid, n, Some(&mut dtmp));
            attention_backward(&bc.qkv, &bc.probs, &dtmp, n, w, self.heads, &mut dqkv, &mut scratch);
            blk.qkv.backward(p, g, &bc.af, &dqkv, n, Some(&mut dtmp));
            modulate_backward(&bc.a, &bc.film[..2 * w], &dtmp, &mut dmod, &mut dfilm[..2 * w]);
            blk.ln1.backward(p, g, &bc.x, &bc.a_stats, &dmod, n, &mut dh);
            blk.film.backward(p, g, &cache.t_act, &dfilm, 1, Some(&mut tmp_w));
            add_into(&mut dact, &tmp_w);
        }

        self.input.backward(p, g, &cache.x, &dh, n, None);
        let mut dtemb: Vec<S> = dact.iter().zip(&cache.temb).map(|(d, e)| *d * silu_grad(*e)).collect();
        for row in dh.chunks_exact(w) {
            for (d, v) in dtemb.iter_mut().zip(row) {
                *d += *v;
            }
        }
        let mut dta = vec![S::zero(); w];
        self.time2.backward(p, g, &cache.t_a, &dtemb, 1, Some(&mut dta));
        for (d, h) in dta.iter_mut().zip(&cache.t_h) {
            *d = *d * silu_grad(*h);
        }
        self.time1.backward(p, g, &cache.t_in, &dta, 1, None);
    }
}

/// Step embedding position: `100 ln sigma` with `sigma^2 = (1 - ab) / ab`.
/// Spreads the low-noise steps, where sigma changes fastest, over many
/// embedding periods.
pub fn noise_position(alpha_bar: f64) -> f64 {
    let var = ((1.0 - alpha_bar) / alpha_bar).max(1e-12);
    50.0 * var.ln()
}

/// `y = x (1 + scale) + shift` per channel, with `film = [scale | shift]`.
fn modulate<S: Scalar>(x: &[S], film: &[S], y: &mut [S]) {
    let w = film.len() / 2;
    let (scale, shift) = film.split_at(w);
    for (xr, yr) in x.chunks_exact(w).zip(y.chunks_exact_mut(w)) {
        for k in 0..w {
            yr[k] = xr[k] * (S::one() + scale[k]) + shift[k];
        }
    }
}

/// Writes `dx` and `dfilm` (both overwritten) for `modulate`.
fn modulate_backward<S: Scalar>(x: &[S], film: &[S], dy: &[S], dx: &mut [S], dfilm: &mut [S]) {
    let w = film.len() / 2;
    dfilm.fill(S::zero());
    let (ds, db) = dfilm.split_at_mut(w);
    for ((xr, dyr), dxr) in x.chunks_exact(w).zip(dy.chunks_exact(w)).zip(dx.chunks_exact_mut(w)) {
        for k in 0..w {
            dxr[k] = dyr[k] * (S::one() + film[k]);
            ds[k] += dyr[k] * xr[k];
            db[k] += dyr[k];
        }
    }
}

fn add_into<S: Scalar>(acc: &mut [S], v: &[S]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += *b;
    }
}

/// Trained (or freshly initialized) denoiser with its normalization.
#[derive(Debug, Clone)]
pub struct DenoiserModel {
    pub config: DenoiserConfig,
    /// Per-dimension mean and std of canonical training motion, meters.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// RMS of the normalized training motion.
    pub sigma_data: f64,
    /// JSON snapshot of the training options.
    pub training: String,
    pub net: Network,
    pub params: Vec<f32>,
}

/// Preconditioning coefficients `(c_in, c_skip, c_out)`.
pub fn preconditioning(alpha_bar: f64, sigma_data: f64) -> (f64, f64, f64) {
    let sd2 = sigma_data * sigma_data;
    let var = alpha_bar * sd2 + 1.0 - alpha_bar;
    (
        1.0 / var.sqrt(),
        alpha_bar.sqrt() * sd2 / var,
        (1.0 - alpha_bar).sqrt() * sigma_data / var.sqrt(),
    )
}

/// Per-dimension statistics of canonical sequences, with the std floored.
pub fn normalization_stats(dataset: &[MotionSequence]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut sum = vec![0.0; POSE_DIM];
    let mut sum2 = vec![0.0; POSE_DIM];
    let mut count = 0usize;
    for seq in dataset {
        for t in 0..seq.len() {
            for (k, v) in seq.frame_flat(t).enumerate() {
                sum[k] += v;
                sum2[k] += v * v;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Config("cannot normalize an empty dataset".into()));
    }
    let n = count as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sum2
        .iter()
        .zip(&mean)
        .map(|(s2, m)| (s2 / n - m * m).max(0.0).sqrt().max(STD_FLOOR))
        .collect();
    Ok((mean, std))
}

impl DenoiserModel {
    pub fn new(config: DenoiserConfig, mean: Vec<f64>, std: Vec<f64>, sigma_data: f64, params: Vec<f32>) -> Result<Self> {
        config.check()?;
        let net = Network::new(POSE_DIM, config.width, config.heads, config.ffn, config.layers);
        let model = DenoiserModel {
            config,
            mean,
            std,
            sigma_data,
            training: String::new(),
            net,
            params,
        };
        model.check()?;
        Ok(model)
    }

    /// A randomly initialized model.
    pub fn initialized<R: Rng>(config: DenoiserConfig, mean: Vec<f64>, std: Vec<f64>, sigma_data: f64, rng: &mut R) -> Result<Self> {
        config.check()?;
        let net = Network::new(POSE_DIM, config.width, config.heads, config.ffn, config.layers);
        let params = net.init(rng);
        Self::new(config, mean, std, sigma_data, params)
    }

    pub fn check(&self) -> Result<()> {
        if self.mean.len() != POSE_DIM || self.std.len() != POSE_DIM {
            return Err(Error::Shape(format!("normalization needs {POSE_DIM} dimensions")));
        }
        if self.std.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Config("normalization std must be positive".into()));
        }
        if !(self.sigma_data > 0.0) {
            return Err(Error::Config("data scale must be positive".into()));
        }
        if self.params.len() != self.net.n_params() {
            return Err(Error::Shape(format!(
                "{} parameters, config needs {}",
                self.params.len(),
                self.net.n_params()
            )));
        }
        Ok(())
    }

    pub fn check_schedule(&self, schedule: &NoiseSchedule) -> Result<()> {
        let c = &self.config;
        if schedule.steps() != c.steps || schedule.beta_min != c.beta_min || schedule.beta_max != c.beta_max {
            return Err(Error::Config(format!(
                "model was trained with {} steps in [{}, {}], schedule has {} steps in [{}, {}]",
                c.steps,
                c.beta_min,
                c.beta_max,
                schedule.steps(),
                schedule.beta_min,
                schedule.beta_max
            )));
        }
        Ok(())
    }

    /// Flattened `L x 171` z-scored frames.
    pub fn normalize(&self, seq: &MotionSequence) -> Vec<f64> {
        let mut out = Vec::with_capacity(seq.len() * POSE_DIM);
        for t in 0..seq.len() {
            out.extend(seq.frame_flat(t).enumerate().map(|(k, v)| (v - self.mean[k]) / self.std[k]));
        }
        out
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<Vec<nalgebra::Vector3<f64>>> {
        x.chunks_exact(POSE_DIM)
            .map(|row| {
                (0..WHOLE_BODY_JOINTS)
                    .map(|j| {
                        let v = |c: usize| row[3 * j + c] * self.std[3 * j + c] + self.mean[3 * j + c];
                        nalgebra::Vector3::new(v(0), v(1), v(2))
                    })
                    .collect()
            })
            .collect()
    }

    pub fn cache(&self, n: usize) -> Cache<f32> {
        self.net.cache(n)
    }

    /// `D(x_t, t)` on normalized motion of `n` frames.
    pub fn predict_x0(&self, x_t: &[f64], alpha_bar: f64, cache: &mut Cache<f32>) -> Vec<f64> {
        let (c_in, c_skip, c_out) = preconditioning(alpha_bar, self.sigma_data);
        let input: Vec<f32> = x_t.iter().map(|v| (v * c_in) as f32).collect();
        self.net.forward(&self.params, &input, noise_position(alpha_bar), cache);
        x_t.iter()
            .zip(&cache.out)
            .map(|(x, f)| c_skip * x + c_out * *f as f64)
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut w = Writer::with_header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
        for v in [c.layers, c.width, c.heads, c.ffn, c.window, c.steps, POSE_DIM] {
            w.u32(v as u32);
        }
        w.f64(c.beta_min);
        w.f64(c.beta_max);
        w.u64(c.seed);
        w.f64(self.sigma_data);
        w.u32(self.training.len() as u32);
        w.bytes(self.training.as_bytes());
        w.f64s(&self.mean);
        w.f64s(&self.std);
        w.u32(self.net.layout.entries.len() as u32);
        for e in &self.net.layout.entries {
            w.u32(e.name.len() as u32);
            w.bytes(e.name.as_bytes());
            w.u32(e.shape.len() as u32);
            for d in &e.shape {
                w.u32(*d as u32);
            }
            w.u64(e.offset as u64);
        }
        w.u64(self.params.len() as u64);
        w.f32s(&self.params);
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.header(CHECKPOINT_MAGIC, "denoiser checkpoint", CHECKPOINT_VERSION)?;
        let mut u = || r.u32().map(|v| v as usize);
        let (layers, width, heads, ffn, window, steps, dim) = (u()?, u()?, u()?, u()?, u()?, u()?, u()?);
        if dim != POSE_DIM {
            return Err(Error::Format(format!("checkpoint pose dimension {dim}, expected {POSE_DIM}")));
        }
        let config = DenoiserConfig {
            layers,
            width,
            heads,
            ffn,
            window,
            steps,
            beta_min: r.f64()?,
            beta_max: r.f64()?,
            seed: r.u64()?,
        };
        config.check()?;
        let sigma_data = r.f64()?;
        let n = r.u32()? as usize;
        let training = String::from_utf8_lossy(r.take(n)?).into_owned();
        let mean = r.f64s(POSE_DIM)?;
        let std = r.f64s(POSE_DIM)?;
        let net = Network::new(POSE_DIM, width, heads, ffn, layers);
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8_lossy(r.take(len)?).into_owned();
            let nd = r.u32()? as usize;
            let shape = (0..nd).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            let offset = r.u64()? as usize;
            entries.push(TensorEntry { name, shape, offset });
        }
        if entries != net.layout.entries {
            return Err(Error::Format("checkpoint tensor directory does not match its config".into()));
        }
        let n_params = r.u64()? as usize;
        if n_params != net.n_params() {
            return Err(Error::Format(format!(
                "checkpoint holds {n_params} parameters, config needs {}",
                net.n_params()
            )));
        }
        let params = r.f32s(n_params)?;
        if !r.is_empty() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        let mut model = DenoiserModel::new(config, mean, std, sigma_data, params)?;
        model.training = training;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&binio::read_file(path)?)
    }
}
