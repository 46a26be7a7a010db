//! Detection and regression network definitions.

use limbpose_core::NUM_MAPS;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conv::{Conv3d, ConvGeometry, ConvTranspose3d};
use crate::layers::{BatchNorm3d, Branches, Layer, Mode, Param, Relu, Sequential};
use crate::tensor::Tensor;
use crate::{NetError, Result};

/// Number of 2x spatial halvings in the detection encoder.
pub const DETECTION_DEPTH: usize = 4;

/// Prior foreground probability used to initialize the detection head bias.
const HEAD_PRIOR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionNetSpec {
    pub height: usize,
    pub width: usize,
    /// Frames per clip.
    pub frames: usize,
    /// Channels of the first convolution; every other width derives from it.
    #[serde(default = "default_base_width")]
    pub base_width: usize,
    /// Adds each encoder output to the decoder output of the same
    /// resolution.
    #[serde(default)]
    pub skip_connections: bool,
}

fn default_base_width() -> usize {
    64
}

impl DetectionNetSpec {
    pub fn new(height: usize, width: usize, frames: usize) -> Self {
        DetectionNetSpec {
            height,
            width,
            frames,
            base_width: 64,
            skip_connections: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let div = 1 << DETECTION_DEPTH;
        if self.height == 0 || self.width == 0 || self.height % div != 0 || self.width % div != 0 {
            return Err(NetError::Shape(format!(
                "detection input {}x{} must have height and width divisible by {div}",
                self.height, self.width
            )));
        }
        if self.frames == 0 {
            return Err(NetError::Shape("clips need at least one frame".into()));
        }
        if self.base_width < 2 || self.base_width % 2 != 0 {
            return Err(NetError::Parameter(format!(
                "base width must be even and at least 2, got {}",
                self.base_width
            )));
        }
        Ok(())
    }
}

/// What the regression network is fed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegressionInput {
    /// Depth plus the 20 affinity maps.
    DepthAndAffinity,
    /// Depth only.
    DepthOnly,
}

impl RegressionInput {
    pub fn channels(self) -> usize {
        match self {
            RegressionInput::DepthAndAffinity => 1 + NUM_MAPS,
            RegressionInput::DepthOnly => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegressionNetSpec {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub input: RegressionInput,
    pub channels: Vec<usize>,
    /// Cubic kernel size per layer, odd.
    pub kernels: Vec<usize>,
}

impl RegressionNetSpec {
    pub fn new(height: usize, width: usize, frames: usize, input: RegressionInput) -> Self {
        RegressionNetSpec {
            height,
            width,
            frames,
            input,
            channels: vec![64, 128, 256, 256, 256],
            kernels: vec![3, 3, 3, 3, 1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.frames == 0 {
            return Err(NetError::Shape("regression input dimensions must be positive".into()));
        }
        if self.channels.is_empty() || self.channels.len() != self.kernels.len() {
            return Err(NetError::Parameter(format!(
                "{} channel widths for {} kernels",
                self.channels.len(),
                self.kernels.len()
            )));
        }
        if self.channels.contains(&0) || self.kernels.iter().any(|k| k % 2 == 0) {
            return Err(NetError::Parameter("widths must be positive and kernels odd".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NetSpec {
    Detection(DetectionNetSpec),
    Regression(RegressionNetSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Detection,
    Regression,
}

fn conv_bn_relu(conv: Box<dyn Layer>, cout: usize) -> Vec<Box<dyn Layer>> {
    vec![conv, Box::new(BatchNorm3d::new(cout)), Box::new(Relu::new())]
}

const DOWN: ConvGeometry = ConvGeometry {
    kernel: [2, 2, 2],
    stride: [1, 2, 2],
    // Temporal padding after the clip keeps the frame count.
    pad: [(0, 1), (0, 0), (0, 0)],
};

fn branch(cin: usize, cout: usize, up: bool, rng: &mut ChaCha8Rng) -> Sequential {
    let first: Box<dyn Layer> = if up {
        Box::new(ConvTranspose3d::new(cin, cout, DOWN, false, rng))
    } else {
        Box::new(Conv3d::new(cin, cout, DOWN, false, rng))
    };
    let mut layers = conv_bn_relu(first, cout);
    layers.extend(conv_bn_relu(
        Box::new(Conv3d::new(cout, cout, ConvGeometry::cube(3, 1), false, rng)),
        cout,
    ));
    Sequential::new(layers)
}

fn block(cin: usize, branch_width: usize, up: bool, rng: &mut ChaCha8Rng) -> Box<dyn Layer> {
    let a = branch(cin, branch_width, up, rng);
    let b = branch(cin, branch_width, up, rng);
    let fused = 2 * branch_width;
    let fuse = Sequential::new(conv_bn_relu(
        Box::new(Conv3d::new(fused, fused, ConvGeometry::cube(1, 0), false, rng)),
        fused,
    ));
    Box::new(Branches::new(a, b, fuse))
}

fn build_detection(spec: &DetectionNetSpec, rng: &mut ChaCha8Rng) -> Vec<(String, Box<dyn Layer>)> {
    let b = spec.base_width;
    let mut layers: Vec<(String, Box<dyn Layer>)> = Vec::new();
    layers.push((
        "stem".into(),
        Box::new(Sequential::new(conv_bn_relu(
            Box::new(Conv3d::new(1, b, ConvGeometry::cube(3, 1), false, rng)),
            b,
        ))),
    ));
    let mut cin = b;
    for i in 0..DETECTION_DEPTH {
        let width = b << i;
        layers.push((format!("encoder{}", i + 1), block(cin, width, false, rng)));
        cin = 2 * width;
    }
    for i in 0..DETECTION_DEPTH {
        // Branch widths 4b, 2b, b, b/2 mirror the encoder's fused widths.
        let width = (b << (DETECTION_DEPTH - 1)) >> (i + 1);
        layers.push((format!("decoder{}", i + 1), block(cin, width, true, rng)));
        cin = 2 * width;
    }
    let mut head = Conv3d::new(cin, NUM_MAPS, ConvGeometry::cube(1, 0), true, rng);
    // Small weights and a bias at the foreground prior keep early
    // predictions near the sparse target rate.
    head.weight.value.iter_mut().for_each(|w| *w *= 0.1);
    let prior = (HEAD_PRIOR / (1.0 - HEAD_PRIOR)).ln() as f32;
    head.bias.as_mut().unwrap().value.fill(prior);
    layers.push(("head".into(), Box::new(head)));
    layers
}

fn build_regression(spec: &RegressionNetSpec, rng: &mut ChaCha8Rng) -> Vec<(String, Box<dyn Layer>)> {
    let mut layers: Vec<(String, Box<dyn Layer>)> = Vec::new();
    let mut cin = spec.input.channels();
    for (i, (&c, &k)) in spec.channels.iter().zip(&spec.kernels).enumerate() {
        let conv = Conv3d::new(cin, c, ConvGeometry::cube(k, k / 2), false, rng);
        layers.push((format!("layer{}", i + 1), Box::new(Sequential::new(conv_bn_relu(Box::new(conv), c)))));
        cin = c;
    }
    let mut head = Conv3d::new(cin, NUM_MAPS, ConvGeometry::cube(1, 0), true, rng);
    head.weight.value.iter_mut().for_each(|w| *w *= 0.1);
    layers.push(("head".into(), Box::new(head)));
    layers
}

pub struct Network {
    pub spec: NetSpec,
    pub seed: u64,
    layers: Vec<(String, Box<dyn Layer>)>,
    /// `(from, to)`: the output of stage `from` is added to that of `to`.
    skips: Vec<(usize, usize)>,
}

/// Stem and encoder outputs paired with the decoder stage whose output has
/// the same shape.
fn detection_skips() -> Vec<(usize, usize)> {
    (0..DETECTION_DEPTH).map(|i| (i, 2 * DETECTION_DEPTH - i)).collect()
}

impl Network {
    pub fn detection(spec: DetectionNetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Network {
            layers: build_detection(&spec, &mut rng),
            skips: if spec.skip_connections { detection_skips() } else { Vec::new() },
            spec: NetSpec::Detection(spec),
            seed,
        })
    }

    pub fn regression(spec: RegressionNetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Network {
            layers: build_regression(&spec, &mut rng),
            skips: Vec::new(),
            spec: NetSpec::Regression(spec),
            seed,
        })
    }

    pub fn build(spec: NetSpec, seed: u64) -> Result<Self> {
        match spec {
            NetSpec::Detection(s) => Network::detection(s, seed),
            NetSpec::Regression(s) => Network::regression(s, seed),
        }
    }

    pub fn task(&self) -> Task {
        match self.spec {
            NetSpec::Detection(_) => Task::Detection,
            NetSpec::Regression(_) => Task::Regression,
        }
    }

    pub fn input_channels(&self) -> usize {
        match &self.spec {
            NetSpec::Detection(_) => 1,
            NetSpec::Regression(s) => s.input.channels(),
        }
    }

    /// `[C, T, H, W]` of one input sample.
    pub fn input_dims(&self) -> [usize; 4] {
        let (t, h, w) = match &self.spec {
            NetSpec::Detection(s) => (s.frames, s.height, s.width),
            NetSpec::Regression(s) => (s.frames, s.height, s.width),
        };
        [self.input_channels(), t, h, w]
    }

    fn check_input(&self, shape: [usize; 5]) -> Result<()> {
        if shape[1..] != self.input_dims() || shape[0] == 0 {
            return Err(NetError::Shape(format!(
                "network expects [N, {:?}] input, got {shape:?}",
                self.input_dims()
            )));
        }
        Ok(())
    }

    /// Output shape of every top-level stage for a batch of one.
    pub fn stage_shapes(&self) -> Result<Vec<(String, [usize; 5])>> {
        let [c, t, h, w] = self.input_dims();
        let mut s = [1, c, t, h, w];
        let mut out = Vec::new();
        for (name, l) in &self.layers {
            s = l.out_shape(s)?;
            out.push((name.clone(), s));
        }
        Ok(out)
    }

    /// Raw network output: logits for detection, values for regression.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.check_input(x.shape)?;
        let mut saved: Vec<Option<Tensor>> = vec![None; self.layers.len()];
        let mut y = x.clone();
        for (i, (_, l)) in self.layers.iter_mut().enumerate() {
            y = l.forward(&y, mode)?;
            for &(from, to) in &self.skips {
                if from == i {
                    saved[from] = Some(y.clone());
                }
                if to == i {
                    y.add_assign(saved[from].as_ref().expect("skip source precedes its target"));
                }
            }
        }
        Ok(y)
    }

    /// Evaluation-mode output: probabilities for detection.
    pub fn predict(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.forward(x, Mode::Eval)?;
        Ok(match self.task() {
            Task::Detection => y.map(sigmoid),
            Task::Regression => y,
        })
    }

    pub fn backward(&mut self, grad: &Tensor) {
        self.backward_input(grad);
    }

    /// Backward pass returning the gradient with respect to the input.
    pub fn backward_input(&mut self, grad: &Tensor) -> Tensor {
        let mut pending: Vec<Option<Tensor>> = vec![None; self.layers.len()];
        let mut g = grad.clone();
        for (i, (_, l)) in self.layers.iter_mut().enumerate().rev() {
            for &(from, to) in &self.skips {
                if to == i {
                    pending[from] = Some(g.clone());
                }
            }
            if let Some(extra) = pending[i].take() {
                g.add_assign(&extra);
            }
            g = l.backward(&g);
        }
        g
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for (_, l) in &mut self.layers {
            l.visit_params(f);
        }
    }

    pub fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Vec<f32>)) {
        for (_, l) in &mut self.layers {
            l.visit_buffers(f);
        }
    }

    pub fn zero_grad(&mut self) {
        self.visit_params(&mut |p| p.zero_grad());
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.len());
        n
    }

    /// Every parameter and buffer value in visit order.
    pub fn state(&mut self) -> Vec<Vec<f32>> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.push(p.value.clone()));
        self.visit_buffers(&mut |b| out.push(b.clone()));
        out
    }

    pub fn load_state(&mut self, state: &[Vec<f32>]) -> Result<()> {
        let mut lens = Vec::new();
        self.visit_params(&mut |p| lens.push(p.len()));
        self.visit_buffers(&mut |b| lens.push(b.len()));
        if lens.len() != state.len() || lens.iter().zip(state).any(|(&l, s)| l != s.len()) {
            return Err(NetError::Shape("state does not match the network layout".into()));
        }
        let mut it = state.iter();
        self.visit_params(&mut |p| p.value.copy_from_slice(it.next().unwrap()));
        self.visit_buffers(&mut |b| b.copy_from_slice(it.next().unwrap()));
        Ok(())
    }
}

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Layer;
    use rand::Rng;

    #[test]
    fn detection_stage_shapes() {
        let net = Network::detection(DetectionNetSpec::new(96, 128, 3), 0).unwrap();
        let shapes = net.stage_shapes().unwrap();
        let get = |name: &str| shapes.iter().find(|(n, _)| n == name).unwrap().1;
        assert_eq!(get("stem"), [1, 64, 3, 96, 128]);
        assert_eq!(get("encoder1"), [1, 128, 3, 48, 64]);
        assert_eq!(get("encoder4"), [1, 1024, 3, 6, 8]);
        assert_eq!(get("decoder1"), [1, 512, 3, 12, 16]);
        assert_eq!(get("decoder4"), [1, 64, 3, 96, 128]);
        assert_eq!(get("head"), [1, 20, 3, 96, 128]);
    }

    #[test]
    fn detection_rejects_indivisible_sizes() {
        assert!(matches!(
            Network::detection(DetectionNetSpec::new(95, 128, 3), 0),
            Err(NetError::Shape(_))
        ));
        assert!(Network::detection(DetectionNetSpec::new(96, 120, 3), 0).is_err());
    }

    #[test]
    fn parameter_count_is_deterministic() {
        let spec = DetectionNetSpec {
            base_width: 8,
            ..DetectionNetSpec::new(32, 32, 3)
        };
        let a = Network::detection(spec, 1).unwrap().param_count();
        let b = Network::detection(spec, 2).unwrap().param_count();
        assert_eq!(a, b);
        // Stem conv + BN: 27 * 8 + 16.
        let mut net = Network::detection(spec, 1).unwrap();
        let mut first = Vec::new();
        net.visit_params(&mut |p| first.push(p.len()));
        assert_eq!(&first[..3], &[27 * 8, 8, 8]);
    }

    #[test]
    fn regression_input_channels() {
        let spec = RegressionNetSpec {
            channels: vec![4, 4],
            kernels: vec![3, 1],
            ..RegressionNetSpec::new(8, 8, 3, RegressionInput::DepthAndAffinity)
        };
        let mut net = Network::regression(spec.clone(), 0).unwrap();
        assert!(net.forward(&Tensor::zeros([1, 21, 3, 8, 8]), Mode::Eval).is_ok());
        assert!(matches!(
            net.forward(&Tensor::zeros([1, 20, 3, 8, 8]), Mode::Eval),
            Err(NetError::Shape(_))
        ));
        let mut only = Network::regression(
            RegressionNetSpec {
                input: RegressionInput::DepthOnly,
                ..spec
            },
            0,
        )
        .unwrap();
        let y = only.forward(&Tensor::zeros([2, 1, 3, 8, 8]), Mode::Eval).unwrap();
        assert_eq!(y.shape, [2, 20, 3, 8, 8]);
    }

    #[test]
    fn state_round_trip() {
        let spec = DetectionNetSpec {
            base_width: 4,
            ..DetectionNetSpec::new(16, 16, 1)
        };
        let mut a = Network::detection(spec, 1).unwrap();
        let mut b = Network::detection(spec, 2).unwrap();
        b.load_state(&a.state()).unwrap();
        assert_eq!(a.state(), b.state());
    }

    // Directional derivative of a random linear functional of the output
    // along a random input direction, against a central difference. Layers
    // with ReLUs need small steps because kinks bias wider differences.
    fn input_gradient_error(layer: &mut dyn Layer, shape: [usize; 5], seed: u64, h: f32) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut random = |n: usize| (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect::<Vec<_>>();
        let x = Tensor::from_vec(shape, random(shape.iter().product())).unwrap();
        let y = layer.forward(&x, Mode::Train).unwrap();
        let w = random(y.len());
        let dir = random(x.len());
        let dx = layer.backward(&Tensor::from_vec(y.shape, w.clone()).unwrap());
        let mut f = |delta: f32| -> f64 {
            let mut xs = x.clone();
            xs.data.iter_mut().zip(&dir).for_each(|(v, d)| *v += delta * d);
            let y = layer.forward(&xs, Mode::Train).unwrap();
            y.data.iter().zip(&w).map(|(&a, &b)| a as f64 * b as f64).sum()
        };
        let numeric = (f(h) - f(-h)) / (2.0 * h as f64);
        let analytic: f64 = dx.data.iter().zip(&dir).map(|(&a, &b)| a as f64 * b as f64).sum();
        (numeric - analytic).abs() / numeric.abs().max(analytic.abs())
    }

    #[test]
    fn skip_links_route_gradients() {
        // Linear stages make central differences exact up to rounding.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let conv = |cin, cout, rng: &mut ChaCha8Rng| -> Box<dyn Layer> {
            Box::new(Conv3d::new(cin, cout, ConvGeometry::cube(3, 1), false, rng))
        };
        let mut net = Network {
            spec: NetSpec::Detection(DetectionNetSpec::new(16, 16, 2)),
            seed: 0,
            layers: vec![
                ("a".into(), conv(1, 3, &mut rng)),
                ("b".into(), conv(3, 3, &mut rng)),
                ("c".into(), conv(3, 3, &mut rng)),
                ("d".into(), conv(3, 2, &mut rng)),
            ],
            skips: vec![(0, 2), (1, 2)],
        };
        assert!(input_gradient_error(&mut NetworkLayer(&mut net), [1, 1, 2, 16, 16], 3, 0.1) < 1e-4);
        let with_skips = net.forward(&Tensor::from_vec([1, 1, 2, 16, 16], vec![0.5; 512]).unwrap(), Mode::Eval).unwrap();
        net.skips.clear();
        let without = net.forward(&Tensor::from_vec([1, 1, 2, 16, 16], vec![0.5; 512]).unwrap(), Mode::Eval).unwrap();
        assert_ne!(with_skips, without);
    }

    #[test]
    fn skip_connections_keep_shapes_and_parameters() {
        let plain = DetectionNetSpec {
            base_width: 4,
            ..DetectionNetSpec::new(32, 32, 2)
        };
        let skipped = DetectionNetSpec {
            skip_connections: true,
            ..plain
        };
        let mut a = Network::detection(plain, 1).unwrap();
        let mut b = Network::detection(skipped, 1).unwrap();
        assert_eq!(a.param_count(), b.param_count());
        let x = Tensor::from_vec([1, 1, 2, 32, 32], (0..2048).map(|i| (i % 13) as f32 / 13.0).collect()).unwrap();
        let ya = a.predict(&x).unwrap();
        let yb = b.predict(&x).unwrap();
        assert_eq!(ya.shape, yb.shape);
        assert_ne!(ya, yb);
    }

    // Exposes a whole network to the layer-level gradient check.
    struct NetworkLayer<'a>(&'a mut Network);

    impl Layer for NetworkLayer<'_> {
        fn out_shape(&self, input: [usize; 5]) -> Result<[usize; 5]> {
            Ok(input)
        }

        fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
            self.0.forward(x, mode)
        }

        fn backward(&mut self, grad: &Tensor) -> Tensor {
            self.0.backward_input(grad)
        }

        fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
            self.0.visit_params(f)
        }
    }

    #[test]
    fn encoder_and_decoder_blocks_backpropagate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut down = block(2, 3, false, &mut rng);
        let mut up = block(2, 3, true, &mut rng);
        assert!(input_gradient_error(down.as_mut(), [2, 2, 3, 8, 8], 11, 1e-4) < 1e-2);
        assert!(input_gradient_error(up.as_mut(), [2, 2, 3, 4, 4], 12, 1e-4) < 1e-2);
    }
}
