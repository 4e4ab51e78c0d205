//! Synthetic signal bases and their assembly into regression targets.
//!
//! Every 2D map is indexed `map[y][x]` with 0-based integer pixel indices.
//! Random draws come from streams keyed by `(group, basis, channel, batch)`
//! so that global/local replication and group summation can be checked
//! against individually realized bases.

use std::f64::consts::PI;
use std::io::Write;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::Seed;

/// Channel counts a target tensor (or RNN width) may take.
pub const CHANNEL_CHOICES: [usize; 5] = [16, 32, 48, 64, 96];

/// A single-channel 2D signal map, row-major `h × w`.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalMap {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl SignalMap {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.w..(y + 1) * self.w]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisChoice {
    X,
    Y,
    #[default]
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Global,
    Local,
}

fn check_frequency(f: f64) -> Result<()> {
    if f > 0.0 && f <= 0.5 {
        Ok(())
    } else {
        Err(Error::InvalidFrequency(f))
    }
}

pub fn gen_sin1d(f: f64, phi: f64, axis: Axis, h: usize, w: usize) -> Result<SignalMap> {
    check_frequency(f)?;
    let mut m = SignalMap::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let t = match axis {
                Axis::X => x,
                Axis::Y => y,
            };
            m.data[y * w + x] = (2.0 * PI * f * t as f64 + phi).sin();
        }
    }
    Ok(m)
}

pub fn gen_sin2d(fx: f64, fy: f64, phi: f64, h: usize, w: usize) -> Result<SignalMap> {
    check_frequency(fx)?;
    check_frequency(fy)?;
    let mut m = SignalMap::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            m.data[y * w + x] = (2.0 * PI * fx * x as f64 + 2.0 * PI * fy * y as f64 + phi).sin();
        }
    }
    Ok(m)
}

/// Number of pixels a `k`% dot map sets: round-half-up of `k/100 · h·w`.
pub fn dot_count(k: f64, h: usize, w: usize) -> usize {
    ((k * (h * w) as f64) / 100.0 + 0.5).floor() as usize
}

/// `k`% of pixels, chosen without replacement, set to ±1 with equal odds.
pub fn gen_dot<R: Rng + ?Sized>(k: f64, h: usize, w: usize, rng: &mut R) -> Result<SignalMap> {
    if !(0.0..=100.0).contains(&k) {
        return Err(Error::InvalidSpec(format!("dot percentage {k} outside [0, 100]")));
    }
    let mut m = SignalMap::zeros(h, w);
    let count = dot_count(k, h, w).min(h * w);
    for idx in sample(rng, h * w, count).into_vec() {
        m.data[idx] = if rng.random::<bool>() { 1.0 } else { -1.0 };
    }
    Ok(m)
}

/// Gaussian-blurred dot map rescaled so `max|v| == 1`.
pub fn gen_gdot<R: Rng + ?Sized>(k: f64, sigma: f64, h: usize, w: usize, rng: &mut R) -> Result<SignalMap> {
    let dots = gen_dot(k, h, w, rng)?;
    gaussian_blur_normalized(&dots, sigma)
}

/// Separable Gaussian filter (radius ⌈3σ⌉, half-sample symmetric reflection
/// at the borders) followed by division by the max magnitude. All-zero maps
/// stay all-zero.
pub fn gaussian_blur_normalized(map: &SignalMap, sigma: f64) -> Result<SignalMap> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidSpec(format!("gaussian sigma {sigma} must be positive")));
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|v| *v /= total);

    let (h, w) = (map.h, map.w);
    let mut tmp = SignalMap::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            tmp.data[y * w + x] = (-radius..=radius)
                .zip(&kernel)
                .map(|(d, kv)| kv * map.at(y, reflect(x as isize + d, w)))
                .sum();
        }
    }
    let mut out = SignalMap::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            out.data[y * w + x] = (-radius..=radius)
                .zip(&kernel)
                .map(|(d, kv)| kv * tmp.at(reflect(y as isize + d, h), x))
                .sum();
        }
    }
    let peak = out.max_abs();
    if peak > 0.0 {
        out.data.iter_mut().for_each(|v| *v /= peak);
    }
    Ok(out)
}

/// Half-sample symmetric index reflection: `… b a | a b c … | c b …`.
fn reflect(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

/// Average-pools each image to `h' × w'`, tiles/truncates its 3 channels to
/// `channels`, and min-max rescales every image to `[−1, 1]`. Constant images
/// map to all-zero. Output is `b × channels × h' × w'`.
pub fn gen_resize(images: &Tensor<f32>, out_h: usize, out_w: usize, channels: usize) -> Result<Tensor<f32>> {
    let (b, c, h, w) = images.dims4()?;
    if out_h == 0 || out_w == 0 || h % out_h != 0 || w % out_w != 0 {
        return Err(Error::InvalidSpec(format!(
            "resize from {h}x{w} to {out_h}x{out_w} needs integer pooling factors"
        )));
    }
    let (fy, fx) = (h / out_h, w / out_w);
    let mut out = Tensor::<f32>::zeros(&[b, channels, out_h, out_w]);
    let plane = out_h * out_w;
    for bi in 0..b {
        let mut pooled = vec![0.0f64; c * plane];
        for ci in 0..c {
            let src = &images.data()[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut s = 0.0f64;
                    for y in oy * fy..(oy + 1) * fy {
                        for x in ox * fx..(ox + 1) * fx {
                            s += src[y * w + x] as f64;
                        }
                    }
                    pooled[ci * plane + oy * out_w + ox] = s / (fy * fx) as f64;
                }
            }
        }
        let lo = pooled.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = pooled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let dst = &mut out.data_mut()[bi * channels * plane..(bi + 1) * channels * plane];
        for co in 0..channels {
            let src = &pooled[(co % c) * plane..(co % c + 1) * plane];
            for (d, &v) in dst[co * plane..(co + 1) * plane].iter_mut().zip(src) {
                *d = if hi > lo { (2.0 * (v - lo) / (hi - lo) - 1.0) as f32 } else { 0.0 };
            }
        }
    }
    Ok(out)
}

/// A Sin frequency range `[a, b]` with the candidate frequencies drawn from it.
/// Each realized map picks its frequencies uniformly among `values`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencySet {
    pub range: [f64; 2],
    pub values: Vec<f64>,
}

impl FrequencySet {
    pub fn fixed(f: f64) -> Self {
        Self {
            range: [f, f],
            values: vec![f],
        }
    }

    /// `count` frequencies uniform in `(a, b)`.
    pub fn sample<R: Rng + ?Sized>(a: f64, b: f64, count: usize, rng: &mut R) -> Self {
        let values = (0..count)
            .map(|_| {
                let v = rng.random_range(a..b);
                if v > 0.0 {
                    v
                } else {
                    b
                }
            })
            .collect();
        Self { range: [a, b], values }
    }

    fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::InvalidSpec("empty frequency set".into()));
        }
        self.values.iter().try_for_each(|&f| check_frequency(f))
    }

    fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.values[rng.random_range(0..self.values.len())]
    }
}

/// One synthetic signal basis. `phase: None` draws a uniform phase per map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum SignalBasis {
    Sin1d {
        freqs: FrequencySet,
        #[serde(default)]
        phase: Option<f64>,
        #[serde(default)]
        axis: AxisChoice,
    },
    Sin2d {
        freqs: FrequencySet,
        #[serde(default)]
        phase: Option<f64>,
    },
    Dot {
        k: f64,
    },
    Gdot {
        k: f64,
        #[serde(default = "unit_sigma")]
        sigma: f64,
    },
    Resize,
    Zero,
}

fn unit_sigma() -> f64 {
    1.0
}

impl SignalBasis {
    pub fn validate(&self) -> Result<()> {
        match self {
            SignalBasis::Sin1d { freqs, .. } | SignalBasis::Sin2d { freqs, .. } => freqs.validate(),
            SignalBasis::Dot { k } if !(0.0..=100.0).contains(k) => {
                Err(Error::InvalidSpec(format!("dot percentage {k} outside [0, 100]")))
            }
            SignalBasis::Gdot { k, sigma } if !(0.0..=100.0).contains(k) || !(*sigma > 0.0) => {
                Err(Error::InvalidSpec(format!("gdot k={k} sigma={sigma} out of range")))
            }
            _ => Ok(()),
        }
    }

    /// Draws one `h × w` map. Resize reads images and is handled by the caller.
    pub fn draw_map<R: Rng + ?Sized>(&self, h: usize, w: usize, rng: &mut R) -> Result<SignalMap> {
        match self {
            SignalBasis::Sin1d { freqs, phase, axis } => {
                let f = freqs.pick(rng);
                let phi = phase.unwrap_or_else(|| rng.random_range(0.0..2.0 * PI));
                let axis = match axis {
                    AxisChoice::X => Axis::X,
                    AxisChoice::Y => Axis::Y,
                    AxisChoice::Random => {
                        if rng.random::<bool>() {
                            Axis::X
                        } else {
                            Axis::Y
                        }
                    }
                };
                gen_sin1d(f, phi, axis, h, w)
            }
            SignalBasis::Sin2d { freqs, phase } => {
                let fx = freqs.pick(rng);
                let fy = freqs.pick(rng);
                let phi = phase.unwrap_or_else(|| rng.random_range(0.0..2.0 * PI));
                gen_sin2d(fx, fy, phi, h, w)
            }
            SignalBasis::Dot { k } => gen_dot(*k, h, w, rng),
            SignalBasis::Gdot { k, sigma } => gen_gdot(*k, *sigma, h, w, rng),
            SignalBasis::Zero => Ok(SignalMap::zeros(h, w)),
            SignalBasis::Resize => Err(Error::InvalidSpec("resize has no standalone map".into())),
        }
    }
}

/// Bases summed elementwise into `channels` maps sharing one scope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisGroup {
    pub bases: Vec<SignalBasis>,
    pub scope: Scope,
    pub channels: usize,
}

impl BasisGroup {
    pub fn validate(&self) -> Result<()> {
        if !CHANNEL_CHOICES.contains(&self.channels) {
            return Err(Error::InvalidSpec(format!(
                "channel count {} not in {CHANNEL_CHOICES:?}",
                self.channels
            )));
        }
        if self.bases.is_empty() {
            return Err(Error::InvalidSpec("basis group without bases".into()));
        }
        for b in &self.bases {
            b.validate()?;
            if matches!(b, SignalBasis::Resize) && self.scope == Scope::Global {
                return Err(Error::Scope("resize is only defined for local scope".into()));
            }
        }
        Ok(())
    }
}

/// Target specification for one backbone stage. A stage with no groups is
/// not supervised.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTargetSpec {
    pub groups: Vec<BasisGroup>,
}

impl StageTargetSpec {
    pub fn channels(&self) -> usize {
        self.groups.iter().map(|g| g.channels).sum()
    }

    pub fn is_active(&self) -> bool {
        !self.groups.is_empty()
    }
}

/// Realizes one basis as a `b × channels × h × w` tensor. Map `(c, i)` is
/// drawn from stream `seed.child(c).child(i)` with `i = 0` for every batch
/// element under global scope.
pub fn realize_basis(
    basis: &SignalBasis,
    scope: Scope,
    channels: usize,
    b: usize,
    h: usize,
    w: usize,
    images: Option<&Tensor<f32>>,
    seed: Seed,
) -> Result<Tensor<f32>> {
    basis.validate()?;
    if let SignalBasis::Resize = basis {
        if scope == Scope::Global {
            return Err(Error::Scope("resize is only defined for local scope".into()));
        }
        let images = images.ok_or_else(|| Error::InvalidSpec("resize target needs input images".into()))?;
        if images.shape()[0] != b {
            return Err(Error::ShapeMismatch {
                context: "resize images batch",
                expected: vec![b],
                got: images.shape().to_vec(),
            });
        }
        return gen_resize(images, h, w, channels);
    }
    let plane = h * w;
    let mut out = Tensor::<f32>::zeros(&[b, channels, h, w]);
    for c in 0..channels {
        let cseed = seed.child(c as u64);
        let mut shared = None;
        for bi in 0..b {
            let map = match scope {
                Scope::Global => {
                    if shared.is_none() {
                        shared = Some(basis.draw_map(h, w, &mut cseed.child(0).rng())?);
                    }
                    shared.clone().expect("drawn above")
                }
                Scope::Local => basis.draw_map(h, w, &mut cseed.child(bi as u64).rng())?,
            };
            let off = (bi * channels + c) * plane;
            for (d, &v) in out.data_mut()[off..off + plane].iter_mut().zip(&map.data) {
                *d = v as f32;
            }
        }
    }
    Ok(out)
}

/// Sum of a group's bases; basis `j` uses stream `seed.child(j)`.
pub fn realize_group(
    group: &BasisGroup,
    b: usize,
    h: usize,
    w: usize,
    images: Option<&Tensor<f32>>,
    seed: Seed,
) -> Result<Tensor<f32>> {
    group.validate()?;
    let mut acc = Tensor::<f32>::zeros(&[b, group.channels, h, w]);
    for (j, basis) in group.bases.iter().enumerate() {
        let t = realize_basis(basis, group.scope, group.channels, b, h, w, images, seed.child(j as u64))?;
        acc.add_assign(&t)?;
    }
    Ok(acc)
}

/// `ℱ*` for one stage: groups realized with `seed.child(group index)` and
/// concatenated along channels.
pub fn realize_stage_target(
    spec: &StageTargetSpec,
    b: usize,
    h: usize,
    w: usize,
    images: Option<&Tensor<f32>>,
    seed: Seed,
) -> Result<Tensor<f32>> {
    if spec.groups.is_empty() {
        return Err(Error::InvalidSpec("stage target without groups".into()));
    }
    let parts = spec
        .groups
        .iter()
        .enumerate()
        .map(|(gi, g)| realize_group(g, b, h, w, images, seed.child(gi as u64)))
        .collect::<Result<Vec<_>>>()?;
    concat_channels(&parts)
}

/// Concatenates `(b, c_k, h, w)` tensors along the channel axis.
pub fn concat_channels(parts: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let (b, _, h, w) = parts
        .first()
        .ok_or_else(|| Error::InvalidSpec("nothing to concatenate".into()))?
        .dims4()?;
    let mut total = 0;
    for p in parts {
        let (pb, pc, ph, pw) = p.dims4()?;
        if (pb, ph, pw) != (b, h, w) {
            return Err(Error::ShapeMismatch {
                context: "concat_channels",
                expected: vec![b, pc, h, w],
                got: p.shape().to_vec(),
            });
        }
        total += pc;
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(b * total * plane);
    for bi in 0..b {
        for p in parts {
            let pc = p.shape()[1];
            data.extend_from_slice(&p.data()[bi * pc * plane..(bi + 1) * pc * plane]);
        }
    }
    Tensor::from_vec(&[b, total, h, w], data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseDistribution {
    /// N(0, 1)
    Gaussian,
    /// U(−1, 1)
    Uniform,
}

/// Additive input noise `level · ε`; `level` is one of 0.0, 0.1, …, 1.0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub distribution: NoiseDistribution,
    pub level: f64,
}

impl NoiseSpec {
    pub const LEVELS: usize = 11;

    pub fn none() -> Self {
        Self {
            distribution: NoiseDistribution::Gaussian,
            level: 0.0,
        }
    }

    pub fn from_step(distribution: NoiseDistribution, step: usize) -> Self {
        assert!(step < Self::LEVELS);
        Self {
            distribution,
            level: step as f64 / 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let scaled = self.level * 10.0;
        if (0.0..=10.0).contains(&scaled) && (scaled - scaled.round()).abs() < 1e-9 {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!("noise level {} not on the 0.1 grid", self.level)))
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.distribution {
            NoiseDistribution::Gaussian => StandardNormal.sample(rng),
            NoiseDistribution::Uniform => rng.random_range(-1.0..1.0),
        }
    }
}

pub fn apply_input_noise<T: crate::nn::Scalar>(images: &Tensor<T>, spec: &NoiseSpec, seed: Seed) -> Result<Tensor<T>> {
    spec.validate()?;
    if spec.level == 0.0 {
        return Ok(images.clone());
    }
    let mut rng = seed.rng();
    let level = spec.level;
    let mut out = images.clone();
    for v in out.data_mut() {
        *v += T::from_f64(level * spec.sample(&mut rng));
    }
    Ok(out)
}

/// Sequence signal for the recurrent proxy: bases summed per batch element
/// over an `l × d` map, plus optional noise. Only local scope is defined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceSignalSpec {
    #[serde(default)]
    pub bases: Vec<SignalBasis>,
    #[serde(default = "local_scope")]
    pub scope: Scope,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
}

fn local_scope() -> Scope {
    Scope::Local
}

impl SequenceSignalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.scope == Scope::Global {
            return Err(Error::Scope("sequence signals are local only".into()));
        }
        for b in &self.bases {
            if matches!(b, SignalBasis::Resize) {
                return Err(Error::InvalidSpec("resize is not defined for sequences".into()));
            }
            b.validate()?;
        }
        if let Some(n) = &self.noise {
            n.validate()?;
        }
        Ok(())
    }

    /// `(l, b, d)` tensor. Basis `j` for batch element `i` uses
    /// `seed.child(j).child(i)`; noise uses `seed.derive("noise")`.
    pub fn realize(&self, l: usize, b: usize, d: usize, seed: Seed) -> Result<Tensor<f32>> {
        self.validate()?;
        let mut out = Tensor::<f32>::zeros(&[l, b, d]);
        for (j, basis) in self.bases.iter().enumerate() {
            for bi in 0..b {
                let map = basis.draw_map(l, d, &mut seed.child(j as u64).child(bi as u64).rng())?;
                for t in 0..l {
                    let dst = &mut out.data_mut()[(t * b + bi) * d..(t * b + bi + 1) * d];
                    for (o, &v) in dst.iter_mut().zip(map.row(t)) {
                        *o += v as f32;
                    }
                }
            }
        }
        match &self.noise {
            Some(n) => apply_input_noise(&out, n, seed.derive("noise")),
            None => Ok(out),
        }
    }
}

/// Input and target sequence tensors `(ℐ, ℱ*)`, each `l × b × d`.
pub fn realize_rnn_tensors(
    input: &SequenceSignalSpec,
    target: &SequenceSignalSpec,
    l: usize,
    b: usize,
    d: usize,
    seed: Seed,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    if !CHANNEL_CHOICES.contains(&d) {
        return Err(Error::InvalidSpec(format!("sequence width {d} not in {CHANNEL_CHOICES:?}")));
    }
    Ok((
        input.realize(l, b, d, seed.derive("input"))?,
        target.realize(l, b, d, seed.derive("target"))?,
    ))
}

/// Writes a map as comma-separated rows.
pub fn write_csv_grid<W: Write>(out: &mut W, map: &SignalMap) -> std::io::Result<()> {
    for y in 0..map.h {
        let row: Vec<String> = map.row(y).iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Writes a map as an ASCII graymap (P2), mapping `[−1, 1]` to `[0, 255]`
/// with clamping.
pub fn write_pgm<W: Write>(out: &mut W, map: &SignalMap) -> std::io::Result<()> {
    writeln!(out, "P2\n{} {}\n255", map.w, map.h)?;
    for y in 0..map.h {
        let row: Vec<String> = map
            .row(y)
            .iter()
            .map(|v| (((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8).to_string())
            .collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    Ok(())
}

/// Extracts channel `c` of batch element `bi` from a `(b, c, h, w)` tensor.
pub fn map_of(t: &Tensor<f32>, bi: usize, c: usize) -> Result<SignalMap> {
    let (_, channels, h, w) = t.dims4()?;
    let off = (bi * channels + c) * h * w;
    Ok(SignalMap {
        h,
        w,
        data: t.data()[off..off + h * w].iter().map(|&v| v as f64).collect(),
    })
}
