//! U-Net likelihood regressor: configuration, training and inference.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::likelihood::LikelihoodMap;
use crate::nn::serialize::{read_network, write_network};
use crate::nn::{ForwardTrace, LayerSpec, Network, Node, Params};
use crate::rng::substream;
use crate::tensor::{Plane, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    /// Number of 2x down-sampling steps in the encoder.
    pub depth: usize,
    /// Channels at the finest level; doubled at each coarser level.
    pub base_channels: usize,
    /// Square training patch / inference tile size in pixels.
    pub input_size: usize,
    /// Standard deviation of the target Gaussians, pixels.
    pub sigma: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            depth: 2,
            base_channels: 8,
            input_size: 64,
            sigma: 3.0,
            learning_rate: 1e-3,
            steps: 2000,
            batch_size: 4,
            seed: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.depth == 0 || self.base_channels == 0 || self.input_size == 0 || self.batch_size == 0 {
            return bad("depth, base_channels, input_size and batch_size must be positive".into());
        }
        if self.depth > 8 || !self.input_size.is_multiple_of(1 << self.depth) {
            return bad(format!(
                "input_size {} is not divisible by 2^depth = {}",
                self.input_size,
                1usize << self.depth.min(8)
            ));
        }
        if !(self.sigma > 0.0) || !(self.learning_rate > 0.0) {
            return bad("sigma and learning_rate must be positive".into());
        }
        Ok(())
    }

    /// Parse `key = value` lines; keys are the field names. Blank lines and
    /// `#` comments are ignored. Keys not present keep their defaults.
    pub fn parse(text: &str, path: &Path) -> Result<NetConfig> {
        let mut cfg = NetConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let bad = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let (key, value) = line.split_once('=').ok_or_else(|| bad(format!("expected key = value, got {line:?}")))?;
            cfg.set(key.trim(), value.trim()).map_err(bad)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<NetConfig> {
        let path = path.as_ref();
        NetConfig::parse(&std::fs::read_to_string(path)?, path)
    }

    /// Set one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("invalid value {v:?} for {key}"))
        }
        match key {
            "depth" => self.depth = num(key, value)?,
            "base_channels" => self.base_channels = num(key, value)?,
            "input_size" => self.input_size = num(key, value)?,
            "sigma" => self.sigma = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "steps" => self.steps = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "depth = {}", self.depth);
        let _ = writeln!(s, "base_channels = {}", self.base_channels);
        let _ = writeln!(s, "input_size = {}", self.input_size);
        let _ = writeln!(s, "sigma = {}", self.sigma);
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }
}

/// Build the U-Net topology for `cfg` with zero parameters.
///
/// Each level is two 3x3 conv + ReLU blocks. The decoder upsamples by nearest
/// neighbour, applies a 3x3 conv + ReLU, concatenates the skip connection and
/// applies two more conv blocks. A linear 1x1 head produces one channel.
pub fn build_unet(cfg: &NetConfig) -> Result<Network> {
    cfg.validate()?;
    let mut nodes: Vec<Node> = Vec::new();
    let mut push = |spec: LayerSpec, inputs: Vec<usize>| -> usize {
        nodes.push(Node { spec, inputs });
        nodes.len()
    };
    let conv = |i, o| LayerSpec::Conv2d {
        in_channels: i,
        out_channels: o,
        kernel: 3,
    };
    let mut v = 0;
    let mut c = 1;
    let mut skips = Vec::new();
    let block = |push: &mut dyn FnMut(LayerSpec, Vec<usize>) -> usize, v: usize, ci: usize, co: usize| {
        let a = push(conv(ci, co), vec![v]);
        let a = push(LayerSpec::Relu, vec![a]);
        let b = push(conv(co, co), vec![a]);
        push(LayerSpec::Relu, vec![b])
    };
    for level in 0..cfg.depth {
        let ch = cfg.base_channels << level;
        v = block(&mut push, v, c, ch);
        c = ch;
        skips.push((v, ch));
        v = push(LayerSpec::MaxPool2x2, vec![v]);
    }
    let ch = cfg.base_channels << cfg.depth;
    v = block(&mut push, v, c, ch);
    c = ch;
    for &(skip, ch) in skips.iter().rev() {
        v = push(LayerSpec::Upsample2x, vec![v]);
        v = push(conv(c, ch), vec![v]);
        v = push(LayerSpec::Relu, vec![v]);
        v = push(LayerSpec::Concat, vec![v, skip]);
        v = block(&mut push, v, 2 * ch, ch);
        c = ch;
    }
    push(LayerSpec::OutputHead { in_channels: c }, vec![v]);
    Network::new(1, nodes)
}

/// Fan-in scaled Gaussian weights (He scaling before ReLUs, unit-variance
/// scaling for the linear head), zero biases.
pub fn init_params(net: &mut Network, seed: u64) {
    let mut rng = substream(seed, "init");
    let specs: Vec<LayerSpec> = net.nodes().iter().map(|n| n.spec).collect();
    for (spec, p) in specs.iter().zip(net.params_mut()) {
        let fan_in = spec.fan_in();
        if fan_in == 0 {
            continue;
        }
        let gain = match spec {
            LayerSpec::OutputHead { .. } => 1.0,
            _ => 2.0,
        };
        let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).unwrap();
        for w in p.weight.iter_mut() {
            *w = normal.sample(&mut rng);
        }
        p.bias.fill(0.0);
    }
}

/// Adaptive-moment optimiser state.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, num_params: usize) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn update(&mut self, params: &mut [Params], grads: &[Params]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let flat_params = params.iter_mut().flat_map(|p| p.iter_mut());
        let flat_grads = grads.iter().flat_map(|g| g.iter());
        for (((p, &g), m), v) in flat_params.zip(flat_grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mh = *m / bc1;
            let vh = *v / bc2;
            *p -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// A trained likelihood regressor and the tile size it operates on.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub net: Network,
    pub input_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    /// Fingerprint of the final parameters.
    pub checksum: u64,
    pub seconds: f64,
}

impl TrainReport {
    /// Mean loss over a window at the start and end of the run.
    pub fn head_tail_means(&self, window: usize) -> (f64, f64) {
        let n = self.losses.len();
        let w = window.min(n).max(1);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
        (mean(&self.losses[..w.min(n)]), mean(&self.losses[n.saturating_sub(w)..]))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            let _ = writeln!(s, "{i},{l}");
        }
        s
    }
}

/// Mean squared error and its gradient with respect to `output`.
pub fn mse_with_grad(output: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let n = output.len() as f64;
    let mut loss = 0.0;
    let grad = output
        .iter()
        .zip(target)
        .map(|(y, t)| {
            let d = y - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    (loss / n, grad)
}

/// Train the regressor on `(image, target)` pairs with mean-squared error.
///
/// Each step draws `batch_size` pairs from a per-epoch shuffle of the data;
/// the result is a deterministic function of the config and the data.
pub fn train(cfg: &NetConfig, pairs: &[(Plane, LikelihoodMap)]) -> Result<(Detector, TrainReport)> {
    train_with_progress(cfg, pairs, |_, _| {})
}

pub fn train_with_progress(
    cfg: &NetConfig,
    pairs: &[(Plane, LikelihoodMap)],
    mut progress: impl FnMut(usize, f64),
) -> Result<(Detector, TrainReport)> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("training needs at least one pair".into()));
    }
    for (img, target) in pairs {
        let want = (cfg.input_size, cfg.input_size);
        if img.dims() != want || target.plane().dims() != want {
            return Err(Error::InvalidArgument(format!(
                "training pair is {}x{}, configured input size is {}",
                img.width(),
                img.height(),
                cfg.input_size
            )));
        }
    }
    let start = Instant::now();
    let mut net = build_unet(cfg)?;
    init_params(&mut net, cfg.seed);
    let mut adam = Adam::new(cfg.learning_rate, net.num_params());
    let mut order_rng = substream(cfg.seed, "batches");
    let inputs: Vec<Tensor> = pairs.iter().map(|(img, _)| img.to_tensor()).collect();

    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut grads = net.zero_grads();
        let mut batch_loss = 0.0;
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order = (0..pairs.len()).collect();
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            let idx = order[cursor];
            cursor += 1;
            let (y, trace) = net.forward_traced(&inputs[idx])?;
            let (loss, g) = mse_with_grad(y.data(), pairs[idx].1.plane().data());
            batch_loss += loss;
            let g = Tensor::from_vec(y.shape(), g)?.scale(1.0 / cfg.batch_size as f64);
            net.accumulate_train_grads(&trace, &g, &mut grads)?;
        }
        batch_loss /= cfg.batch_size as f64;
        if !batch_loss.is_finite() || grads.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteLoss { step });
        }
        losses.push(batch_loss);
        progress(step, batch_loss);
        adam.update(net.params_mut(), &grads);
    }
    let report = TrainReport {
        losses,
        checksum: net.fingerprint(),
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((
        Detector {
            net,
            input_size: cfg.input_size,
        },
        report,
    ))
}

/// Top-left corner of one inference tile and the trace recorded on it.
#[derive(Debug, Clone)]
pub struct TileTrace {
    pub x0: usize,
    pub y0: usize,
    pub trace: ForwardTrace,
}

/// Tile origins along one axis: stride is three quarters of the tile, the
/// last tile is flush with the far edge.
pub fn tile_origins(len: usize, tile: usize) -> Option<Vec<usize>> {
    if len < tile || tile == 0 {
        return None;
    }
    let stride = tile - tile / 4;
    let mut out = Vec::new();
    let mut p = 0;
    while p + tile < len {
        out.push(p);
        p += stride;
    }
    out.push(len - tile);
    out.dedup();
    Some(out)
}

impl Detector {
    pub fn new(net: Network, input_size: usize) -> Detector {
        Detector { net, input_size }
    }

    /// Untrained network with initial weights, mostly for tests.
    pub fn untrained(cfg: &NetConfig) -> Result<Detector> {
        let mut net = build_unet(cfg)?;
        init_params(&mut net, cfg.seed);
        Ok(Detector {
            net,
            input_size: cfg.input_size,
        })
    }

    /// Likelihood map of an image of exactly the configured size, clamped to
    /// `[0, 1]`, together with the recorded forward trace.
    pub fn infer(&self, image: &Plane) -> Result<(LikelihoodMap, ForwardTrace)> {
        if image.dims() != (self.input_size, self.input_size) {
            return Err(Error::NotTileable {
                width: image.width(),
                height: image.height(),
                tile: self.input_size,
            });
        }
        let (y, trace) = self.net.forward_traced(&image.to_tensor())?;
        let y = Plane::from_tensor(&y)?.map(|v| v.clamp(0.0, 1.0));
        Ok((LikelihoodMap(y), trace))
    }

    /// Inference on an image at least one tile wide and high. Tiles overlap
    /// by a quarter of their size; overlapping predictions are averaged.
    pub fn infer_tiled(&self, image: &Plane) -> Result<(LikelihoodMap, Vec<TileTrace>)> {
        let tile = self.input_size;
        let not_tileable = || Error::NotTileable {
            width: image.width(),
            height: image.height(),
            tile,
        };
        let xs = tile_origins(image.width(), tile).ok_or_else(not_tileable)?;
        let ys = tile_origins(image.height(), tile).ok_or_else(not_tileable)?;
        let mut sum = Plane::zeros(image.width(), image.height());
        let mut count = Plane::zeros(image.width(), image.height());
        let mut traces = Vec::with_capacity(xs.len() * ys.len());
        for &y0 in &ys {
            for &x0 in &xs {
                let crop = image.crop(x0, y0, tile, tile);
                let (y, trace) = self.net.forward_traced(&crop.to_tensor())?;
                for ty in 0..tile {
                    for tx in 0..tile {
                        let i = (y0 + ty) * image.width() + x0 + tx;
                        sum.data_mut()[i] += y.data()[ty * tile + tx];
                        count.data_mut()[i] += 1.0;
                    }
                }
                traces.push(TileTrace { x0, y0, trace });
            }
        }
        let data = sum
            .data()
            .iter()
            .zip(count.data())
            .map(|(s, c)| (s / c).clamp(0.0, 1.0))
            .collect();
        Ok((LikelihoodMap(Plane::from_vec(image.width(), image.height(), data)?), traces))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = BufWriter::new(File::create(path)?);
        write_network(f, &self.net, self.input_size as u32)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Detector> {
        let f = BufReader::new(File::open(path)?);
        let (net, tile) = read_network(f)?;
        if tile == 0 {
            return Err(Error::CorruptModel("model has no tile size".into()));
        }
        Ok(Detector {
            net,
            input_size: tile as usize,
        })
    }
}
