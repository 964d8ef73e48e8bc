use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ConfigError, HpfKind, NetworkConfig, Variant, Widths, STAGES};
use crate::layers::{
    conv2d, conv_bn_relu, constrained_uniform, kaiming_uniform, maxpool2x2, project_constrained,
    residual_block, srm_filter_bank, upsample2x, BatchStats, BnMode, ConvBn, LayerCtx,
    Projection, ResidualBlock, RunningStats, CONSTRAINED_KERNEL,
};
use crate::tensor::{numel, Real, Result, Tensor, TensorError};

/// How the optimizer treats a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Trainable,
    /// Trainable, re-projected onto the high-pass constraint after each step.
    Constrained,
    /// Never updated (SRM filters).
    Frozen,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub role: ParamRole,
}

impl<T> Param<T> {
    pub fn is_trainable(&self) -> bool {
        self.role != ParamRole::Frozen
    }
}

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnBuffer<T> {
    pub name: String,
    pub stats: RunningStats<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvIdx {
    kernel: usize,
    bias: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvBnIdx {
    conv: ConvIdx,
    gamma: usize,
    beta: usize,
    bn: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct StageIdx {
    conv: ConvBnIdx,
    residual: [ConvBnIdx; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stream {
    Image,
    Noise,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct EncoderIdx {
    stream: Stream,
    hpf: Option<usize>,
    stages: Vec<StageIdx>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    encoders: Vec<EncoderIdx>,
    /// One decoder per encoder, or a single decoder on the concatenated coarse maps.
    decoders: Vec<Vec<ConvBnIdx>>,
    head: ConvIdx,
}

/// Shapes of the intermediate maps of one forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeTrace {
    /// Encoder outputs, image stream first.
    pub coarse: Vec<Vec<usize>>,
    /// Decoder outputs.
    pub dense: Vec<Vec<usize>>,
    /// Input of the prediction head.
    pub fused: Vec<usize>,
    pub output: Vec<usize>,
}

/// Result of [`Model::forward`].
pub struct ForwardOutput<T: Real> {
    /// Per-pixel forged-class probability, `(n, h, w, 1)` or `(h, w, 1)`.
    pub prob: Tensor<T>,
    pub trace: ShapeTrace,
    /// Batch statistics per batch-norm layer (train mode only).
    pub bn_updates: Vec<(usize, BatchStats<T>)>,
    bound: Vec<Tensor<T>>,
}

impl<T: Real> ForwardOutput<T> {
    /// Gradient of each parameter after `backward`, aligned with [`Model::params`].
    pub fn param_grads(&self) -> Vec<Option<Vec<T>>> {
        self.bound.iter().map(|t| t.grad_vec()).collect()
    }
}

/// Two-stream encoder-decoder (or one of its ablation variants).
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Real> {
    config: NetworkConfig,
    widths: Widths,
    params: Vec<Param<T>>,
    bn: Vec<BnBuffer<T>>,
    layout: Layout,
}

struct Builder<T: Real> {
    rng: ChaCha8Rng,
    params: Vec<Param<T>>,
    bn: Vec<BnBuffer<T>>,
    eps: T,
    momentum: T,
}

impl<T: Real> Builder<T> {
    fn push(&mut self, name: String, shape: Vec<usize>, data: Vec<T>, role: ParamRole) -> usize {
        self.params.push(Param { name, shape, data, role });
        self.params.len() - 1
    }

    fn conv(&mut self, name: &str, k: usize, cin: usize, cout: usize) -> ConvIdx {
        let shape = vec![k, k, cin, cout];
        let data = kaiming_uniform(&mut self.rng, numel(&shape), k * k * cin);
        let kernel = self.push(format!("{name}.kernel"), shape, data, ParamRole::Trainable);
        let bias = self.push(format!("{name}.bias"), vec![cout], vec![T::zero(); cout], ParamRole::Trainable);
        ConvIdx { kernel, bias: Some(bias) }
    }

    fn conv_bn(&mut self, name: &str, cin: usize, cout: usize) -> ConvBnIdx {
        let conv = self.conv(&format!("{name}.conv"), 3, cin, cout);
        let gamma = self.push(format!("{name}.bn.gamma"), vec![cout], vec![T::one(); cout], ParamRole::Trainable);
        let beta = self.push(format!("{name}.bn.beta"), vec![cout], vec![T::zero(); cout], ParamRole::Trainable);
        self.bn.push(BnBuffer {
            name: format!("{name}.bn"),
            stats: RunningStats::new(cout, self.eps, self.momentum),
        });
        ConvBnIdx { conv, gamma, beta, bn: self.bn.len() - 1 }
    }

    fn encoder(&mut self, prefix: &str, stream: Stream, widths: &Widths, hpf: HpfKind) -> EncoderIdx {
        let mut cin = 3;
        let hpf = (stream == Stream::Noise).then(|| {
            let shape = [CONSTRAINED_KERNEL, CONSTRAINED_KERNEL, 1, 3];
            match hpf {
                HpfKind::Constrained => {
                    let mut data: Vec<T> =
                        (0..numel(&shape)).map(|_| constrained_uniform(&mut self.rng)).collect();
                    project_constrained(&mut data, shape, &mut self.rng).expect("5x5 kernel");
                    self.push(format!("{prefix}.hpf.kernel"), shape.to_vec(), data, ParamRole::Constrained)
                }
                HpfKind::Srm => {
                    let (data, shape) = srm_filter_bank(1);
                    self.push(format!("{prefix}.hpf.kernel"), shape.to_vec(), data, ParamRole::Frozen)
                }
            }
        });
        let mut stages = Vec::with_capacity(STAGES);
        for (s, &w) in widths.stages.iter().enumerate() {
            let name = format!("{prefix}.s{}", s + 1);
            let conv = self.conv_bn(&format!("{name}.conv"), cin, w);
            let residual = [1, 2, 3].map(|r| self.conv_bn(&format!("{name}.res.c{r}"), w, w));
            stages.push(StageIdx { conv, residual });
            cin = w;
        }
        EncoderIdx { stream, hpf, stages }
    }

    fn decoder(&mut self, prefix: &str, cin: usize, widths: &Widths) -> Vec<ConvBnIdx> {
        let mut c = cin;
        widths
            .decoder
            .iter()
            .enumerate()
            .map(|(s, &w)| {
                let idx = self.conv_bn(&format!("{prefix}.s{}", s + 1), c, w);
                c = w;
                idx
            })
            .collect()
    }
}

fn image_err(msg: String) -> TensorError {
    TensorError::InvalidArgument { op: "forward", msg }
}

impl<T: Real> Model<T> {
    /// Deterministic construction: equal `(cfg, seed)` give equal models.
    pub fn build(cfg: &NetworkConfig, seed: u64) -> Result<Self, ConfigError> {
        let widths = cfg.validate()?;
        let mut b = Builder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: Vec::new(),
            bn: Vec::new(),
            eps: T::from_f64_lossy(cfg.bn_eps),
            momentum: T::from_f64_lossy(cfg.bn_momentum),
        };
        let top = widths.stages[STAGES - 1];
        let dense = widths.decoder[STAGES - 1];
        let (encoders, decoders, head_in) = match cfg.variant {
            Variant::TwoStreamLateFusion => {
                let ie = b.encoder("ised.enc", Stream::Image, &widths, cfg.hpf_kind);
                let id = b.decoder("ised.dec", top, &widths);
                let ne = b.encoder("nsed.enc", Stream::Noise, &widths, cfg.hpf_kind);
                let nd = b.decoder("nsed.dec", top, &widths);
                (vec![ie, ne], vec![id, nd], 2 * dense)
            }
            Variant::NsedOnly => {
                let ne = b.encoder("nsed.enc", Stream::Noise, &widths, cfg.hpf_kind);
                let nd = b.decoder("nsed.dec", top, &widths);
                (vec![ne], vec![nd], dense)
            }
            Variant::EarlyFusionSingleDecoder => {
                let ie = b.encoder("ised.enc", Stream::Image, &widths, cfg.hpf_kind);
                let ne = b.encoder("nsed.enc", Stream::Noise, &widths, cfg.hpf_kind);
                let fd = b.decoder("fused.dec", 2 * top, &widths);
                (vec![ie, ne], vec![fd], dense)
            }
        };
        let head = b.conv("head", 1, head_in, 1);
        Ok(Self {
            config: cfg.clone(),
            widths,
            params: b.params,
            bn: b.bn,
            layout: Layout { encoders, decoders, head },
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn widths(&self) -> &Widths {
        &self.widths
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn bn_buffers(&self) -> &[BnBuffer<T>] {
        &self.bn
    }

    pub fn bn_buffers_mut(&mut self) -> &mut [BnBuffer<T>] {
        &mut self.bn
    }

    /// Number of scalar weights, frozen ones included.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Folds the batch statistics of a training forward pass into the running stats.
    pub fn apply_bn_updates(&mut self, updates: &[(usize, BatchStats<T>)]) {
        for (id, stats) in updates {
            self.bn[*id].stats.update(stats);
        }
    }

    /// Projects every constrained kernel back onto the high-pass constraint.
    pub fn project_constraints(&mut self, rng: &mut ChaCha8Rng) -> Result<Vec<(String, Projection)>> {
        let mut reports = Vec::new();
        for p in self.params.iter_mut().filter(|p| p.role == ParamRole::Constrained) {
            let shape = [p.shape[0], p.shape[1], p.shape[2], p.shape[3]];
            let report = project_constrained(&mut p.data, shape, rng)?;
            if !report.reinitialized.is_empty() {
                reports.push((p.name.clone(), report));
            }
        }
        Ok(reports)
    }

    fn check_input(&self, images: &Tensor<T>) -> Result<()> {
        let [h, w] = self.config.input_size;
        let ok = match *images.shape() {
            [ih, iw, 3] | [_, ih, iw, 3] => ih == h && iw == w,
            _ => false,
        };
        if !ok {
            return Err(image_err(format!("expected ({h}, {w}, 3) images, got {:?}", images.shape())));
        }
        if let Some(v) = images.data().iter().find(|v| **v < T::zero() || **v > T::one()) {
            return Err(image_err(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(())
    }

    /// Runs the network. With `track_grad` the parameters are bound as
    /// gradient-collecting leaves, readable through
    /// [`ForwardOutput::param_grads`] after `backward`.
    pub fn forward(&self, images: &Tensor<T>, mode: BnMode, track_grad: bool) -> Result<ForwardOutput<T>> {
        self.check_input(images)?;
        let bound = self
            .params
            .iter()
            .map(|p| Tensor::leaf(p.data.clone(), &p.shape, track_grad && p.is_trainable()))
            .collect::<Result<Vec<_>>>()?;
        let mut ctx = LayerCtx::new(mode);
        let channel_axis = images.rank() - 1;
        let green = images.slice(channel_axis, 1, 1)?;

        let mut coarse = Vec::with_capacity(self.layout.encoders.len());
        for enc in &self.layout.encoders {
            let mut h = match (enc.stream, enc.hpf) {
                (Stream::Noise, Some(k)) => conv2d(&green, &bound[k], None)?,
                _ => images.clone(),
            };
            for stage in &enc.stages {
                h = conv_bn_relu(&h, &self.conv_bn(&bound, stage.conv), &mut ctx)?;
                let block = ResidualBlock { convs: stage.residual.map(|i| self.conv_bn(&bound, i)) };
                h = residual_block(&h, &block, &mut ctx)?;
                h = maxpool2x2(&h)?;
            }
            coarse.push(h);
        }

        let decoder_inputs = if self.layout.decoders.len() == coarse.len() {
            coarse.clone()
        } else {
            vec![Tensor::concat(&coarse.iter().collect::<Vec<_>>(), channel_axis)?]
        };
        let mut dense = Vec::with_capacity(decoder_inputs.len());
        for (dec, input) in self.layout.decoders.iter().zip(decoder_inputs) {
            let mut h = input;
            for &stage in dec {
                h = upsample2x(&h)?;
                h = conv_bn_relu(&h, &self.conv_bn(&bound, stage), &mut ctx)?;
            }
            dense.push(h);
        }
        let fused = if dense.len() == 1 {
            dense[0].clone()
        } else {
            Tensor::concat(&dense.iter().collect::<Vec<_>>(), channel_axis)?
        };
        let head = self.layout.head;
        let logits = conv2d(&fused, &bound[head.kernel], head.bias.map(|b| &bound[b]))?;
        let prob = logits.sigmoid()?;
        let trace = ShapeTrace {
            coarse: coarse.iter().map(|t| t.shape().to_vec()).collect(),
            dense: dense.iter().map(|t| t.shape().to_vec()).collect(),
            fused: fused.shape().to_vec(),
            output: prob.shape().to_vec(),
        };
        Ok(ForwardOutput { prob, trace, bn_updates: ctx.updates, bound })
    }

    /// Inference-mode probability map without gradient tracking.
    pub fn predict(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(images, BnMode::Infer, false)?.prob)
    }

    fn conv_bn(&self, bound: &[Tensor<T>], idx: ConvBnIdx) -> ConvBn<T> {
        ConvBn {
            kernel: bound[idx.conv.kernel].clone(),
            bias: idx.conv.bias.map(|b| bound[b].clone()),
            gamma: bound[idx.gamma].clone(),
            beta: bound[idx.beta].clone(),
            running: self.bn[idx.bn].stats.clone(),
            bn_id: idx.bn,
        }
    }

    /// Converts the weights to another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64_lossy(x.as_f64())).collect::<Vec<U>>();
        Model {
            config: self.config.clone(),
            widths: self.widths.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), shape: p.shape.clone(), data: conv(&p.data), role: p.role })
                .collect(),
            bn: self
                .bn
                .iter()
                .map(|b| BnBuffer {
                    name: b.name.clone(),
                    stats: RunningStats {
                        mean: conv(&b.stats.mean),
                        var: conv(&b.stats.var),
                        eps: U::from_f64_lossy(b.stats.eps.as_f64()),
                        momentum: U::from_f64_lossy(b.stats.momentum.as_f64()),
                    },
                })
                .collect(),
            layout: self.layout.clone(),
        }
    }
}
