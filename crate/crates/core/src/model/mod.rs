//! The U-Time encoder / decoder / segment-classifier network.

pub mod config;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{receptive_field, UTimeConfig};

use crate::error::{Error, Result};
use crate::tensor::kernels::Padding;
use crate::tensor::{checkpoint, BatchNormState, BatchNormStats, ConvSpec, Element, Mode, Tape, Tensor, Var};

/// Checkpoint entry holding one 0/1 flag per batch-norm layer.
const BN_FLAGS: &str = "batch_norm.initialized";

#[derive(Clone, Debug, PartialEq)]
pub struct Param<F: Element = f32> {
    pub name: String,
    pub value: Tensor<F>,
}

/// Indices of one convolution followed by ReLU and batch normalization.
#[derive(Clone, Copy, Debug, PartialEq)]
struct ConvBn {
    w: usize,
    b: usize,
    gamma: usize,
    beta: usize,
    bn: usize,
    dilation: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct DecoderBlock {
    factor: usize,
    up: ConvBn,
    convs: [ConvBn; 2],
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    encoder: Vec<[ConvBn; 2]>,
    bottom: [ConvBn; 2],
    decoder: Vec<DecoderBlock>,
    head: (usize, usize),
    classifier: (usize, usize),
}

/// What the network emits after the decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    /// Softmax scores for segments of the given width in samples.
    Segments(usize),
    /// Per-sample tanh scores entering the segment classifier, `[B, t, K]`.
    DenseScores,
    /// Segment classifier applied at every sample (pool width 1), `[B, t, K]`.
    DenseProbabilities,
    /// Output of the last encoder convolution, before any up-sampling.
    Bottleneck,
}

/// Output shape of one layer for a single batch item.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub name: String,
    pub kind: &'static str,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UTimeModel<F: Element = f32> {
    config: UTimeConfig,
    params: Vec<Param<F>>,
    bn: Vec<BatchNormState<F>>,
    layout: Layout,
}

struct Builder<'a, F: Element> {
    cfg: &'a UTimeConfig,
    rng: ChaCha8Rng,
    params: Vec<Param<F>>,
    bn: Vec<BatchNormState<F>>,
}

impl<F: Element> Builder<'_, F> {
    fn param(&mut self, name: String, value: Tensor<F>) -> usize {
        self.params.push(Param { name, value });
        self.params.len() - 1
    }

    /// Glorot-uniform weights `[width, cin, cout]` and zero bias.
    fn conv(&mut self, name: &str, width: usize, cin: usize, cout: usize) -> (usize, usize) {
        let limit = (6.0 / ((cin + cout) * width) as f64).sqrt();
        let rng = &mut self.rng;
        let w = Tensor::from_fn([width, cin, cout], |_| F::lit(rng.random_range(-limit..limit)));
        let w = self.param(format!("{name}.weight"), w);
        let b = self.param(format!("{name}.bias"), Tensor::zeros([cout]));
        (w, b)
    }

    fn conv_bn(&mut self, name: &str, width: usize, dilation: usize, cin: usize, cout: usize) -> ConvBn {
        let (w, b) = self.conv(&format!("{name}.conv"), width, cin, cout);
        let gamma = self.param(format!("{name}.bn.gamma"), Tensor::full([cout], F::one()));
        let beta = self.param(format!("{name}.bn.beta"), Tensor::zeros([cout]));
        self.bn.push(BatchNormState::new(
            format!("{name}.bn"),
            cout,
            F::lit(self.cfg.bn_momentum),
            F::lit(self.cfg.bn_epsilon),
        ));
        ConvBn {
            w,
            b,
            gamma,
            beta,
            bn: self.bn.len() - 1,
            dilation,
        }
    }
}

/// State of one forward pass.
struct Pass<'a, F: Element> {
    model: &'a UTimeModel<F>,
    vars: &'a [Var<F>],
    mode: Mode,
    trace: Option<Vec<TraceRow>>,
    stats: Vec<(usize, BatchNormStats<F>)>,
}

impl<F: Element> Pass<'_, F> {
    fn record(&mut self, name: impl Into<String>, kind: &'static str, shape: Vec<usize>) {
        if let Some(t) = self.trace.as_mut() {
            t.push(TraceRow {
                name: name.into(),
                kind,
                shape,
            });
        }
    }

    fn record_var(&mut self, name: impl Into<String>, kind: &'static str, v: &Var<F>) {
        if self.trace.is_some() {
            let shape = v.shape()[1..].to_vec();
            self.record(name, kind, shape);
        }
    }

    fn conv_bn(&mut self, tape: &mut Tape<F>, x: &Var<F>, cb: ConvBn, name: &str) -> Result<Var<F>> {
        let v = self.vars;
        let spec = ConvSpec {
            dilation: cb.dilation,
            padding: Padding::Same,
        };
        let h = tape.conv1d(x, &v[cb.w], Some(&v[cb.b]), spec)?;
        let h = tape.relu(&h);
        let state = &self.model.bn[cb.bn];
        let y = match self.mode {
            Mode::Train => {
                let (y, stats) = tape.batch_norm(&h, &v[cb.gamma], &v[cb.beta], None, state.epsilon)?;
                self.stats.push((cb.bn, stats.expect("batch statistics in train mode")));
                y
            }
            Mode::Infer => state.infer(tape, &h, &v[cb.gamma], &v[cb.beta])?,
        };
        self.record_var(name, "Convolution -> BN", &y);
        Ok(y)
    }
}

impl<F: Element> UTimeModel<F> {
    /// Builds the network with seeded Glorot-uniform weights.
    pub fn new(config: UTimeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let cfg = &config;
        let mut b = Builder {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: Vec::new(),
            bn: Vec::new(),
        };
        let (kw, dil) = (cfg.kernel_width, cfg.dilation);
        let mut cin = cfg.in_channels;
        let mut encoder = Vec::with_capacity(cfg.depth);
        for d in 0..cfg.depth {
            let f = cfg.filters(d);
            let c0 = b.conv_bn(&format!("enc{d}.0"), kw, dil, cin, f);
            let c1 = b.conv_bn(&format!("enc{d}.1"), kw, dil, f, f);
            encoder.push([c0, c1]);
            cin = f;
        }
        let fb = cfg.filters(cfg.depth);
        let bottom = [
            b.conv_bn("bottom.0", kw, dil, cin, fb),
            b.conv_bn("bottom.1", kw, dil, fb, fb),
        ];
        let mut cin = fb;
        let mut decoder = Vec::with_capacity(cfg.depth);
        for j in 0..cfg.depth {
            let level = cfg.depth - 1 - j;
            let f = cfg.filters(level);
            let up = b.conv_bn(&format!("dec{j}.up"), cfg.decoder_kernels[j], 1, cin, f);
            let c0 = b.conv_bn(&format!("dec{j}.0"), kw, 1, 2 * f, f);
            let c1 = b.conv_bn(&format!("dec{j}.1"), kw, 1, f, f);
            decoder.push(DecoderBlock {
                factor: cfg.pool_windows[level],
                up,
                convs: [c0, c1],
            });
            cin = f;
        }
        let head = b.conv("head", 1, cin, cfg.classes);
        let classifier = b.conv("classifier", cfg.classifier_kernel, cfg.classes, cfg.classes);
        let (params, bn) = (b.params, b.bn);
        Ok(Self {
            config,
            params,
            bn,
            layout: Layout {
                encoder,
                bottom,
                decoder,
                head,
                classifier,
            },
        })
    }

    pub fn config(&self) -> &UTimeConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<F>] {
        &mut self.params
    }

    pub fn batch_norms(&self) -> &[BatchNormState<F>] {
        &self.bn
    }

    /// Trainable values only; batch-norm running statistics are excluded.
    pub fn count_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn batch_norm_initialized(&self) -> bool {
        self.bn.iter().all(|b| b.initialized)
    }

    /// Marks mean 0 / variance 1 running statistics as usable, for
    /// inference with an untrained model.
    pub fn seed_batch_norm_identity(&mut self) {
        self.bn.iter_mut().for_each(BatchNormState::seed_identity);
    }

    /// Places every parameter on `tape`, trainable when the tape records.
    pub fn bind(&self, tape: &mut Tape<F>) -> Vec<Var<F>> {
        let grad = tape.is_recording();
        self.params.iter().map(|p| tape.leaf(p.value.clone(), grad)).collect()
    }

    fn check_input(&self, x: &Tensor<F>, head: Head) -> Result<()> {
        let (_, t, c) = x.dims3()?;
        if c != self.config.in_channels {
            return Err(Error::Dimension(format!(
                "input has {c} channels, model expects {}",
                self.config.in_channels
            )));
        }
        let t_min = self.config.t_min();
        if t < t_min {
            return Err(Error::InsufficientLength { len: t, min: t_min });
        }
        if let Head::Segments(i) = head {
            if i == 0 {
                return Err(Error::Parameter("segment width must be positive".into()));
            }
            if t % i != 0 {
                return Err(Error::SegmentAlignment { len: t, segment: i });
            }
        }
        if !x.all_finite() {
            return Err(Error::NonFinite("model input".into()));
        }
        Ok(())
    }

    fn run<'a>(
        &'a self,
        tape: &mut Tape<F>,
        vars: &'a [Var<F>],
        x: &Var<F>,
        mode: Mode,
        head: Head,
        trace: bool,
    ) -> Result<(Var<F>, Pass<'a, F>)> {
        if vars.len() != self.params.len() {
            return Err(Error::Parameter(format!(
                "{} bound variables for {} parameters",
                vars.len(),
                self.params.len()
            )));
        }
        self.check_input(x.value(), head)?;
        let (_, t, c) = x.value().dims3()?;
        let mut pass = Pass {
            model: self,
            vars,
            mode,
            trace: trace.then(Vec::new),
            stats: Vec::new(),
        };
        let lay = &self.layout;
        match head {
            Head::Segments(i) => pass.record("input", "Input", vec![t / i, i, c]),
            _ => pass.record("input", "Input", vec![t, c]),
        }
        pass.record("reshape", "Reshape", vec![t, c]);

        let mut h = x.clone();
        let mut skips = Vec::with_capacity(lay.encoder.len());
        for (d, block) in lay.encoder.iter().enumerate() {
            h = pass.conv_bn(tape, &h, block[0], &format!("enc{d}.0"))?;
            h = pass.conv_bn(tape, &h, block[1], &format!("enc{d}.1"))?;
            let pooled = tape.max_pool1d(&h, self.config.pool_windows[d])?;
            skips.push(std::mem::replace(&mut h, pooled));
            pass.record_var(format!("enc{d}.pool"), "Max Pool", &h);
        }
        for (j, cb) in lay.bottom.iter().enumerate() {
            h = pass.conv_bn(tape, &h, *cb, &format!("bottom.{j}"))?;
        }
        if head == Head::Bottleneck {
            return Ok((h, pass));
        }
        for (j, block) in lay.decoder.iter().enumerate() {
            h = tape.upsample_nearest(&h, block.factor)?;
            pass.record_var(format!("dec{j}.upsample"), "Up-sample", &h);
            h = pass.conv_bn(tape, &h, block.up, &format!("dec{j}.up"))?;
            let skip = skips.pop().expect("one skip per decoder block");
            h = tape.crop_concat(&skip, &h)?;
            drop(skip);
            pass.record_var(format!("dec{j}.concat"), "Crop & Concat", &h);
            h = pass.conv_bn(tape, &h, block.convs[0], &format!("dec{j}.0"))?;
            h = pass.conv_bn(tape, &h, block.convs[1], &format!("dec{j}.1"))?;
        }
        let (hw, hb) = lay.head;
        h = tape.conv1d(&h, &vars[hw], Some(&vars[hb]), ConvSpec::default())?;
        h = tape.tanh(&h);
        pass.record_var("head", "Convolution (tanh)", &h);
        h = tape.zero_pad_end(&h, t)?;
        pass.record_var("pad", "Zero padding", &h);
        let k = self.config.classes;
        let pooled = match head {
            Head::DenseScores | Head::Bottleneck => return Ok((h, pass)),
            Head::DenseProbabilities => h,
            Head::Segments(i) => {
                pass.record("segments", "Reshape", vec![t / i, i, k]);
                let p = tape.avg_pool1d(&h, i, i)?;
                pass.record_var("segment_pool", "Average Pooling", &p);
                p
            }
        };
        let (cw, cb) = lay.classifier;
        let z = tape.conv1d(&pooled, &vars[cw], Some(&vars[cb]), ConvSpec::default())?;
        let out = tape.softmax(&z)?;
        pass.record_var("classifier", "Convolution (softmax)", &out);
        if !out.value().all_finite() {
            return Err(Error::NonFinite("model output".into()));
        }
        Ok((out, pass))
    }

    /// Forward pass; train mode uses batch statistics and folds them into the
    /// running averages.
    pub fn forward(&mut self, tape: &mut Tape<F>, vars: &[Var<F>], x: &Var<F>, mode: Mode, head: Head) -> Result<Var<F>> {
        let (out, pass) = self.run(tape, vars, x, mode, head, false)?;
        let stats = pass.stats;
        for (i, s) in stats {
            self.bn[i].update(&s);
        }
        Ok(out)
    }

    /// Infer-mode forward pass on an existing tape. Never mutates the model.
    pub fn forward_infer(&self, tape: &mut Tape<F>, vars: &[Var<F>], x: &Var<F>, head: Head) -> Result<Var<F>> {
        Ok(self.run(tape, vars, x, Mode::Infer, head, false)?.0)
    }

    /// Segment probabilities `[B, t / segment_samples, K]` in infer mode.
    pub fn predict(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        self.predict_with(x, Head::Segments(self.config.segment_samples))
    }

    pub fn predict_with(&self, x: &Tensor<F>, head: Head) -> Result<Tensor<F>> {
        let mut tape = Tape::inference();
        let vars = self.bind(&mut tape);
        let out = self.forward_infer(&mut tape, &vars, &Var::constant(x.clone()), head)?;
        Ok(out.value().clone())
    }

    /// Segment classifier applied to externally supplied dense scores
    /// `[B, t, K]`: mean pooling of width `segment`, then convolution and softmax.
    pub fn classify_scores(&self, scores: &Tensor<F>, segment: usize) -> Result<Tensor<F>> {
        let mut tape = Tape::inference();
        let vars = self.bind(&mut tape);
        let s = Var::constant(scores.clone());
        let p = tape.avg_pool1d(&s, segment, segment)?;
        let (cw, cb) = self.layout.classifier;
        let z = tape.conv1d(&p, &vars[cw], Some(&vars[cb]), ConvSpec::default())?;
        Ok(tape.softmax(&z)?.value().clone())
    }

    /// Per-layer output shapes for one batch item. Uses batch statistics, so
    /// it also works on a model whose running statistics are unset.
    pub fn trace(&self, x: &Tensor<F>, head: Head) -> Result<Vec<TraceRow>> {
        let mut tape = Tape::inference();
        let vars = self.bind(&mut tape);
        let (_, pass) = self.run(&mut tape, &vars, &Var::constant(x.clone()), Mode::Train, head, true)?;
        Ok(pass.trace.unwrap_or_default())
    }

    pub fn cast<G: Element>(&self) -> UTimeModel<G> {
        UTimeModel {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
            bn: self
                .bn
                .iter()
                .map(|b| BatchNormState {
                    name: b.name.clone(),
                    running_mean: b.running_mean.iter().map(|&v| G::lit(v.to_f64_lossy())).collect(),
                    running_var: b.running_var.iter().map(|&v| G::lit(v.to_f64_lossy())).collect(),
                    momentum: G::lit(b.momentum.to_f64_lossy()),
                    epsilon: G::lit(b.epsilon.to_f64_lossy()),
                    initialized: b.initialized,
                })
                .collect(),
            layout: self.layout.clone(),
        }
    }

    /// Parameters, running statistics and batch-norm flags as named f32 tensors.
    pub fn state_entries(&self) -> Vec<(String, Tensor<f32>)> {
        let mut out: Vec<(String, Tensor<f32>)> = self.params.iter().map(|p| (p.name.clone(), p.value.cast())).collect();
        let to32 = |v: &[F]| v.iter().map(|x| x.to_f64_lossy() as f32).collect::<Vec<_>>();
        for b in &self.bn {
            let n = b.channels();
            out.push((format!("{}.running_mean", b.name), Tensor::new([n], to32(&b.running_mean)).unwrap()));
            out.push((format!("{}.running_var", b.name), Tensor::new([n], to32(&b.running_var)).unwrap()));
        }
        let flags: Vec<f32> = self.bn.iter().map(|b| if b.initialized { 1.0 } else { 0.0 }).collect();
        out.push((BN_FLAGS.to_string(), Tensor::new([flags.len()], flags).unwrap()));
        out
    }

    /// Rebuilds a model for `config` from named entries; every expected
    /// entry must be present with the right shape and nothing else may be.
    pub fn from_entries(config: UTimeConfig, entries: Vec<(String, Tensor<f32>)>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        let mut map: std::collections::HashMap<String, Tensor<f32>> = std::collections::HashMap::new();
        for (name, t) in entries {
            if map.insert(name.clone(), t).is_some() {
                return Err(Error::Checkpoint(format!("duplicate entry `{name}`")));
            }
        }
        let mut take = |name: &str, shape: &[usize]| -> Result<Tensor<f32>> {
            let t = map
                .remove(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing entry `{name}`")))?;
            if t.shape() != shape {
                return Err(Error::Checkpoint(format!(
                    "entry `{name}` has shape {:?}, model expects {shape:?}",
                    t.shape()
                )));
            }
            Ok(t)
        };
        for p in &mut model.params {
            p.value = take(&p.name, p.value.shape())?.cast();
        }
        let nb = model.bn.len();
        let flags = take(BN_FLAGS, &[nb])?;
        for (b, &flag) in model.bn.iter_mut().zip(flags.data()) {
            let n = b.channels();
            let back = |t: Tensor<f32>| t.data().iter().map(|&v| F::lit(v as f64)).collect::<Vec<F>>();
            b.running_mean = back(take(&format!("{}.running_mean", b.name), &[n])?);
            b.running_var = back(take(&format!("{}.running_var", b.name), &[n])?);
            b.initialized = flag != 0.0;
        }
        if let Some(extra) = map.keys().min() {
            return Err(Error::Checkpoint(format!("unexpected entry `{extra}`")));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.state_entries().iter().map(|(n, t)| (n.as_str(), t)).collect::<Vec<_>>())
    }

    pub fn load(config: UTimeConfig, path: &Path) -> Result<Self> {
        Self::from_entries(config, checkpoint::load(path)?)
    }
}
