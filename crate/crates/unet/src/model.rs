//! The encoder–decoder graph, forward inference and backpropagation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::loss::{self, EPS};
use crate::ops::{maxpool2, maxpool2_backward, Conv, UpConv};
use crate::scalar::Real;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Network hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UNetConfig {
    /// Number of pooling stages.
    pub depth: usize,
    /// Feature maps of the first encoder block.
    pub base_channels: usize,
    /// Square input side.
    pub input_size: usize,
    pub in_channels: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            base_channels: 64,
            input_size: 128,
            in_channels: 1,
        }
    }
}

impl UNetConfig {
    /// Small configuration that trains on a CPU in minutes.
    pub fn desk() -> Self {
        Self {
            base_channels: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::InvalidConfig("depth must be at least 1".into()));
        }
        if self.base_channels < 4 {
            return Err(Error::InvalidConfig(format!(
                "base_channels {} below 4",
                self.base_channels
            )));
        }
        if self.in_channels < 1 {
            return Err(Error::InvalidConfig(
                "in_channels must be at least 1".into(),
            ));
        }
        if self.depth >= usize::BITS as usize - 1 {
            return Err(Error::InvalidConfig(format!(
                "depth {} too large",
                self.depth
            )));
        }
        let stride = 1usize << self.depth;
        if self.input_size == 0 || !self.input_size.is_multiple_of(stride) {
            return Err(Error::InvalidConfig(format!(
                "input_size {} is not a positive multiple of 2^{} = {stride}",
                self.input_size, self.depth
            )));
        }
        Ok(())
    }

    /// Width of encoder stage `i` (0-based), or of the bottleneck at `i = depth`.
    pub fn stage_channels(&self, i: usize) -> usize {
        self.base_channels << i
    }
}

/// Name, shape and position of one parameter tensor in the flat vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv3x3Relu,
    MaxPool2x2,
    UpConv2x2,
    /// Concatenation of a decoder feature map with its encoder skip.
    SkipConcat,
    /// 1×1 convolution followed by the logistic function.
    Conv1x1Sigmoid,
}

/// One node of the built graph, for inspection.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerInfo {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Spatial side of the layer output.
    pub size: usize,
}

#[derive(Clone, Copy, Debug)]
struct Slot {
    w: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug)]
struct ConvNode {
    op: Conv,
    at: Slot,
}

#[derive(Clone, Copy, Debug)]
struct UpNode {
    op: UpConv,
    at: Slot,
}

#[derive(Clone, Debug)]
struct Graph {
    enc: Vec<[ConvNode; 2]>,
    bottleneck: [ConvNode; 2],
    /// Indexed by level; level 0 is the full-resolution stage.
    dec: Vec<(UpNode, [ConvNode; 2])>,
    head: ConvNode,
    specs: Vec<ParamSpec>,
    layers: Vec<LayerInfo>,
    total: usize,
}

impl Graph {
    fn build(cfg: &UNetConfig) -> Self {
        let mut p = Params::default();
        let mut layers = Vec::new();
        let mut info = |name: String, kind, cin, cout, size| {
            layers.push(LayerInfo {
                name,
                kind,
                in_channels: cin,
                out_channels: cout,
                size,
            })
        };
        let conv =
            |p: &mut Params, name: &str, cin: usize, cout: usize, k: usize, relu: bool| ConvNode {
                op: Conv { cin, cout, k, relu },
                at: Slot {
                    w: p.push(format!("{name}.weight"), vec![cout, cin, k, k]),
                    b: p.push(format!("{name}.bias"), vec![cout]),
                },
            };

        let mut enc = Vec::new();
        let mut cin = cfg.in_channels;
        for l in 0..cfg.depth {
            let c = cfg.stage_channels(l);
            let size = cfg.input_size >> l;
            enc.push([
                conv(&mut p, &format!("enc{l}.conv0"), cin, c, 3, true),
                conv(&mut p, &format!("enc{l}.conv1"), c, c, 3, true),
            ]);
            info(
                format!("enc{l}.conv0"),
                LayerKind::Conv3x3Relu,
                cin,
                c,
                size,
            );
            info(format!("enc{l}.conv1"), LayerKind::Conv3x3Relu, c, c, size);
            info(
                format!("enc{l}.pool"),
                LayerKind::MaxPool2x2,
                c,
                c,
                size / 2,
            );
            cin = c;
        }
        let cb = cfg.stage_channels(cfg.depth);
        let bsize = cfg.input_size >> cfg.depth;
        let bottleneck = [
            conv(&mut p, "bottleneck.conv0", cin, cb, 3, true),
            conv(&mut p, "bottleneck.conv1", cb, cb, 3, true),
        ];
        info(
            "bottleneck.conv0".into(),
            LayerKind::Conv3x3Relu,
            cin,
            cb,
            bsize,
        );
        info(
            "bottleneck.conv1".into(),
            LayerKind::Conv3x3Relu,
            cb,
            cb,
            bsize,
        );

        let mut dec: Vec<Option<(UpNode, [ConvNode; 2])>> = vec![None; cfg.depth];
        let mut below = cb;
        for l in (0..cfg.depth).rev() {
            let c = cfg.stage_channels(l);
            let size = cfg.input_size >> l;
            let name = format!("dec{l}.up");
            let up = UpNode {
                op: UpConv {
                    cin: below,
                    cout: c,
                },
                at: Slot {
                    w: p.push(format!("{name}.weight"), vec![c, 2, 2, below]),
                    b: p.push(format!("{name}.bias"), vec![c]),
                },
            };
            info(name, LayerKind::UpConv2x2, below, c, size);
            info(
                format!("dec{l}.concat"),
                LayerKind::SkipConcat,
                c,
                2 * c,
                size,
            );
            let convs = [
                conv(&mut p, &format!("dec{l}.conv0"), 2 * c, c, 3, true),
                conv(&mut p, &format!("dec{l}.conv1"), c, c, 3, true),
            ];
            info(
                format!("dec{l}.conv0"),
                LayerKind::Conv3x3Relu,
                2 * c,
                c,
                size,
            );
            info(format!("dec{l}.conv1"), LayerKind::Conv3x3Relu, c, c, size);
            dec[l] = Some((up, convs));
            below = c;
        }
        let head = conv(&mut p, "head", cfg.base_channels, 1, 1, false);
        info(
            "head".into(),
            LayerKind::Conv1x1Sigmoid,
            cfg.base_channels,
            1,
            cfg.input_size,
        );

        Self {
            enc,
            bottleneck,
            dec: dec
                .into_iter()
                .map(|d| d.expect("every level built"))
                .collect(),
            head,
            specs: p.specs,
            layers,
            total: p.total,
        }
    }
}

#[derive(Default)]
struct Params {
    specs: Vec<ParamSpec>,
    total: usize,
}

impl Params {
    fn push(&mut self, name: String, shape: Vec<usize>) -> usize {
        let offset = self.total;
        let spec = ParamSpec {
            name,
            shape,
            offset,
        };
        self.total += spec.len();
        self.specs.push(spec);
        offset
    }
}

/// Cached activations of one conv for the backward pass.
struct ConvRec<T> {
    col: Option<Vec<T>>,
    out: Vec<T>,
}

struct Tape<T> {
    enc: Vec<[ConvRec<T>; 2]>,
    pool_arg: Vec<Vec<u8>>,
    bottleneck: [ConvRec<T>; 2],
    dec: Vec<[ConvRec<T>; 2]>,
    logits: Vec<T>,
}

/// A U-Net with its parameters stored in one flat vector.
#[derive(Clone, Debug)]
pub struct UNet<T = f32> {
    config: UNetConfig,
    graph: Graph,
    params: Vec<T>,
}

/// Builds a freshly initialised network: He-normal kernels, zero biases.
pub fn build_unet(config: UNetConfig, seed: u64) -> Result<UNet<f32>> {
    UNet::new(config, seed)
}

impl<T: Real> UNet<T> {
    pub fn new(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let graph = Graph::build(&config);
        let mut params = vec![T::zero(); graph.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for spec in graph.specs.iter().filter(|s| s.name.ends_with(".weight")) {
            let fan_in = fan_in(spec);
            let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            for p in &mut params[spec.range()] {
                *p = T::lit(dist.sample(&mut rng));
            }
        }
        Ok(Self {
            config,
            graph,
            params,
        })
    }

    /// All parameters zero; used as a target for loading.
    pub fn zeroed(config: UNetConfig) -> Result<Self> {
        config.validate()?;
        let graph = Graph::build(&config);
        let params = vec![T::zero(); graph.total];
        Ok(Self {
            config,
            graph,
            params,
        })
    }

    /// Wraps an existing parameter vector; its length must match the layout.
    pub fn from_params(config: UNetConfig, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let graph = Graph::build(&config);
        if params.len() != graph.total {
            return Err(Error::shape(
                format!("{} parameters", graph.total),
                params.len(),
            ));
        }
        Ok(Self {
            config,
            graph,
            params,
        })
    }

    /// Same network in another precision.
    pub fn cast<U: Real>(&self) -> UNet<U> {
        UNet {
            config: self.config,
            graph: self.graph.clone(),
            params: self.params.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.graph.specs
    }

    pub fn param_count(&self) -> usize {
        self.graph.total
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn layers(&self) -> &[LayerInfo] {
        &self.graph.layers
    }

    /// Output widths of the encoder stages, shallowest first.
    pub fn encoder_channels(&self) -> Vec<usize> {
        self.graph.enc.iter().map(|b| b[1].op.cout).collect()
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.graph.bottleneck[1].op.cout
    }

    /// Output widths of the decoder stages in execution order, deepest first.
    pub fn decoder_channels(&self) -> Vec<usize> {
        self.graph
            .dec
            .iter()
            .rev()
            .map(|(_, c)| c[1].op.cout)
            .collect()
    }

    pub fn skip_connections(&self) -> usize {
        self.graph
            .layers
            .iter()
            .filter(|l| l.kind == LayerKind::SkipConcat)
            .count()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [_, c, h, w] = x.shape();
        let s = self.config.input_size;
        if c != self.config.in_channels || h != s || w != s {
            return Err(Error::shape(
                format!("N×{}×{s}×{s}", self.config.in_channels),
                format!("N×{c}×{h}×{w}"),
            ));
        }
        Ok(())
    }

    /// Probability maps `N×1×S×S`, each value in `[ε, 1−ε]`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let s = self.config.input_size;
        let mut out = Tensor::zeros([x.len(), 1, s, s]);
        for i in 0..x.len() {
            let tape = self.forward_sample(x.sample(i));
            for (o, z) in out.sample_mut(i).iter_mut().zip(&tape.logits) {
                *o = loss::sigmoid(*z).max(T::lit(EPS)).min(T::lit(1.0 - EPS));
            }
        }
        Ok(out)
    }

    fn w(&self, at: Slot, op_len: usize) -> &[T] {
        &self.params[at.w..at.w + op_len]
    }

    fn conv(&self, node: &ConvNode, x: &[T], size: usize) -> ConvRec<T> {
        let (out, col) = node.op.forward(
            x,
            size,
            size,
            self.w(node.at, node.op.weight_len()),
            &self.params[node.at.b..node.at.b + node.op.cout],
        );
        ConvRec { col, out }
    }

    /// ReLU on/off flags and max-pool winners of every unit for one sample.
    /// Two parameter vectors with equal patterns lie on the same linear
    /// piece of the network.
    pub(crate) fn activation_pattern(&self, x: &[T]) -> Vec<u8> {
        let tape = self.forward_sample(x);
        let mut pat = Vec::new();
        let mut relu = |r: &ConvRec<T>| pat.extend(r.out.iter().map(|&v| u8::from(v > T::zero())));
        for block in &tape.enc {
            block.iter().for_each(&mut relu);
        }
        tape.bottleneck.iter().for_each(&mut relu);
        for block in &tape.dec {
            block.iter().for_each(&mut relu);
        }
        for arg in &tape.pool_arg {
            pat.extend_from_slice(arg);
        }
        pat
    }

    fn forward_sample(&self, x: &[T]) -> Tape<T> {
        let g = &self.graph;
        let s = self.config.input_size;
        let mut enc = Vec::with_capacity(g.enc.len());
        let mut pool_arg = Vec::with_capacity(g.enc.len());
        let mut input: Vec<T> = x.to_vec();
        for (l, block) in g.enc.iter().enumerate() {
            let size = s >> l;
            let a = self.conv(&block[0], &input, size);
            let b = self.conv(&block[1], &a.out, size);
            let (pooled, arg) = maxpool2(&b.out, block[1].op.cout, size, size);
            enc.push([a, b]);
            pool_arg.push(arg);
            input = pooled;
        }
        let size = s >> g.enc.len();
        let b0 = self.conv(&g.bottleneck[0], &input, size);
        let b1 = self.conv(&g.bottleneck[1], &b0.out, size);
        let bottleneck = [b0, b1];

        let mut dec: Vec<Option<[ConvRec<T>; 2]>> = (0..g.dec.len()).map(|_| None).collect();
        for l in (0..g.dec.len()).rev() {
            let (up, convs) = &g.dec[l];
            let size = s >> l;
            let below = match &dec.get(l + 1) {
                Some(Some(r)) => &r[1].out,
                _ => &bottleneck[1].out,
            };
            let upped = up.op.forward(
                below,
                size / 2,
                size / 2,
                self.w(up.at, up.op.weight_len()),
                &self.params[up.at.b..up.at.b + up.op.cout],
            );
            let mut cat = Vec::with_capacity(2 * upped.len());
            cat.extend_from_slice(&enc[l][1].out);
            cat.extend_from_slice(&upped);
            let a = self.conv(&convs[0], &cat, size);
            let b = self.conv(&convs[1], &a.out, size);
            dec[l] = Some([a, b]);
        }
        let dec: Vec<[ConvRec<T>; 2]> = dec
            .into_iter()
            .map(|d| d.expect("level computed"))
            .collect();
        let top = dec.first().map(|d| &d[1].out).unwrap_or(&bottleneck[1].out);
        let logits = self.conv(&g.head, top, s).out;
        Tape {
            enc,
            pool_arg,
            bottleneck,
            dec,
            logits,
        }
    }

    /// Mean binary cross-entropy of the batch and its gradient, written to
    /// `grad` (resized and overwritten).
    ///
    /// The gradient is that of the logit-form loss, `(σ(z) − y) / N`; the
    /// reported loss clamps probabilities to `[ε, 1−ε]`.
    pub fn loss_and_grad(&self, x: &Tensor<T>, y: &Tensor<T>, grad: &mut Vec<T>) -> Result<f64> {
        self.check_input(x)?;
        let [n, c, h, w] = y.shape();
        if n != x.len() || c != 1 || h != self.config.input_size || w != h {
            return Err(Error::shape(
                format!("{}×1×{s}×{s} targets", x.len(), s = self.config.input_size),
                format!("{n}×{c}×{h}×{w}"),
            ));
        }
        grad.clear();
        grad.resize(self.params.len(), T::zero());
        let pixels = (n * h * w) as f64;
        let scale = T::lit(1.0 / pixels);
        let mut total = 0.0;
        for i in 0..n {
            let tape = self.forward_sample(x.sample(i));
            let target = y.sample(i);
            let mut dlogits = Vec::with_capacity(tape.logits.len());
            for (&z, &t) in tape.logits.iter().zip(target) {
                let p = loss::sigmoid(z);
                total += loss::bce_term(p.as_f64(), t.as_f64());
                dlogits.push((p - t) * scale);
            }
            self.backward(x.sample(i), &tape, dlogits, grad);
        }
        Ok(total / pixels)
    }

    fn conv_back(
        &self,
        node: &ConvNode,
        x: &[T],
        rec: &ConvRec<T>,
        mut dy: Vec<T>,
        size: usize,
        grad: &mut [T],
        need_dx: bool,
    ) -> Option<Vec<T>> {
        let wl = node.op.weight_len();
        let weight = &self.params[node.at.w..node.at.w + wl];
        let (gw, gb) = split_grad(grad, node.at, wl, node.op.cout);
        node.op.backward(
            x,
            rec.col.as_deref(),
            &rec.out,
            &mut dy,
            size,
            size,
            weight,
            gw,
            gb,
            need_dx,
        )
    }

    fn backward(&self, x: &[T], tape: &Tape<T>, dlogits: Vec<T>, grad: &mut [T]) {
        let g = &self.graph;
        let s = self.config.input_size;
        let depth = g.enc.len();
        let top = tape
            .dec
            .first()
            .map(|d| &d[1].out)
            .unwrap_or(&tape.bottleneck[1].out);
        let head_rec = ConvRec {
            col: None,
            out: Vec::new(),
        };
        let mut dcur = self
            .conv_back(&g.head, top, &head_rec, dlogits, s, grad, true)
            .expect("dx requested");

        let mut dskip: Vec<Vec<T>> = Vec::with_capacity(depth);
        for l in 0..depth {
            let (up, convs) = &g.dec[l];
            let size = s >> l;
            let c = convs[1].op.cout;
            let rec = &tape.dec[l];
            let da = self
                .conv_back(&convs[1], &rec[0].out, &rec[1], dcur, size, grad, true)
                .expect("dx requested");
            // conv0 reads the concatenation; with a 3×3 kernel only its im2col is used.
            let dcat = self
                .conv_back(&convs[0], &[], &rec[0], da, size, grad, true)
                .expect("dx requested");
            let plane = size * size;
            let (ds, dup) = dcat.split_at(c * plane);
            dskip.push(ds.to_vec());
            let below = tape
                .dec
                .get(l + 1)
                .map(|d| &d[1].out)
                .unwrap_or(&tape.bottleneck[1].out);
            let wl = up.op.weight_len();
            let weight = &self.params[up.at.w..up.at.w + wl];
            let (gw, gb) = split_grad(grad, up.at, wl, up.op.cout);
            dcur = up
                .op
                .backward(below, dup, size / 2, size / 2, weight, gw, gb);
        }

        let bsize = s >> depth;
        let bt = &tape.bottleneck;
        let db0 = self
            .conv_back(
                &g.bottleneck[1],
                &bt[0].out,
                &bt[1],
                dcur,
                bsize,
                grad,
                true,
            )
            .expect("dx requested");
        let mut dpooled = self
            .conv_back(&g.bottleneck[0], &[], &bt[0], db0, bsize, grad, true)
            .expect("dx requested");

        for l in (0..depth).rev() {
            let size = s >> l;
            let block = &g.enc[l];
            let rec = &tape.enc[l];
            let mut db = dskip.pop().expect("one skip per level");
            maxpool2_backward(
                &dpooled,
                &tape.pool_arg[l],
                block[1].op.cout,
                size,
                size,
                &mut db,
            );
            let da = self
                .conv_back(&block[1], &rec[0].out, &rec[1], db, size, grad, true)
                .expect("dx requested");
            let input: &[T] = if l == 0 { x } else { &[] };
            match self.conv_back(&block[0], input, &rec[0], da, size, grad, l > 0) {
                Some(dx) => dpooled = dx,
                None => break,
            }
        }
    }
}

fn split_grad<T>(grad: &mut [T], at: Slot, wl: usize, cout: usize) -> (&mut [T], &mut [T]) {
    debug_assert_eq!(at.b, at.w + wl, "bias follows weight");
    let (gw, rest) = grad[at.w..].split_at_mut(wl);
    (gw, &mut rest[..cout])
}

fn fan_in(spec: &ParamSpec) -> usize {
    if spec.name.contains(".up.") {
        // Each output cell of a stride-2 transposed conv sees one tap per input channel.
        spec.shape[3]
    } else {
        spec.shape[1..].iter().product()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(UNetConfig::default().validate().is_ok());
        let bad = |f: fn(&mut UNetConfig)| {
            let mut c = UNetConfig::desk();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.input_size = 100));
        assert!(bad(|c| c.depth = 0));
        assert!(bad(|c| c.base_channels = 2));
        assert!(bad(|c| c.in_channels = 0));
    }

    #[test]
    fn wide_default_channels() {
        let g = Graph::build(&UNetConfig::default());
        let enc: Vec<usize> = g.enc.iter().map(|b| b[1].op.cout).collect();
        assert_eq!(enc, vec![64, 128, 256, 512]);
        assert_eq!(g.bottleneck[1].op.cout, 1024);
    }

    #[test]
    fn layout_is_contiguous() {
        let net = UNet::<f32>::new(
            UNetConfig {
                depth: 2,
                base_channels: 8,
                input_size: 32,
                in_channels: 1,
            },
            0,
        )
        .unwrap();
        let mut at = 0;
        for s in net.param_specs() {
            assert_eq!(s.offset, at, "{}", s.name);
            at += s.len();
        }
        assert_eq!(at, net.param_count());
        for s in net
            .param_specs()
            .iter()
            .filter(|s| s.name.ends_with(".bias"))
        {
            assert!(net.params()[s.range()].iter().all(|&v| v == 0.0));
        }
    }
}
