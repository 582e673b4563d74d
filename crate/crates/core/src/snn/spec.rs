use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ConvGeometry, Tensor};
use crate::error::{Error, Result};

/// Leaky integrate-and-fire constants for one layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LifParams {
    /// Decay applied to the residual potential between steps, in (0, 1].
    pub tau: f64,
    pub v_thr: f64,
    /// Width of the boxcar surrogate centred on `v_thr`.
    pub surrogate_width: f64,
}

impl Default for LifParams {
    fn default() -> Self {
        LifParams { tau: 0.5, v_thr: 1.0, surrogate_width: 1.0 }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::config("tau", format!("{} not in (0, 1]", self.tau)));
        }
        if !(self.v_thr > 0.0) {
            return Err(Error::config("v_thr", format!("{} must be positive", self.v_thr)));
        }
        if !(self.surrogate_width > 0.0 && self.surrogate_width.is_finite()) {
            return Err(Error::config(
                "surrogate_width",
                format!("{} must be positive", self.surrogate_width),
            ));
        }
        Ok(())
    }
}

/// One entry of a [`NetworkSpec`]. Conv and dense layers spike; the head
/// emits the raw synaptic current used as logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default)]
        lif: LifParams,
    },
    AvgPool {
        size: usize,
    },
    Flatten,
    Dense {
        units: usize,
        #[serde(default)]
        lif: LifParams,
    },
    Head {
        classes: usize,
    },
}

impl Layer {
    pub fn lif(&self) -> Option<&LifParams> {
        match self {
            Layer::Conv { lif, .. } | Layer::Dense { lif, .. } => Some(lif),
            _ => None,
        }
    }

    fn is_weighted(&self) -> bool {
        matches!(self, Layer::Conv { .. } | Layer::Dense { .. } | Layer::Head { .. })
    }
}

/// Declarative layer stack. The first weighted layer encodes the input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Input extents `[channels, height, width]`.
    pub input: [usize; 3],
    pub layers: Vec<Layer>,
}

impl NetworkSpec {
    /// Reference toy network for 2×16×16 event input.
    pub fn toy(classes: usize) -> Self {
        let lif = LifParams::default();
        NetworkSpec {
            input: [2, 16, 16],
            layers: vec![
                Layer::Conv { filters: 16, kernel: 4, stride: 2, padding: 0, lif },
                Layer::Conv { filters: 32, kernel: 3, stride: 1, padding: 1, lif },
                Layer::AvgPool { size: 2 },
                Layer::Flatten,
                Layer::Dense { units: 128, lif },
                Layer::Head { classes },
            ],
        }
    }

    pub fn classes(&self) -> usize {
        match self.layers.last() {
            Some(Layer::Head { classes }) => *classes,
            _ => 0,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("spec serialises")
    }
}

/// Resolved shapes and parameter layout of a [`NetworkSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub layers: Vec<LayerPlan>,
    pub param_shapes: Vec<Vec<usize>>,
    /// Layer indices of the spiking layers, in order.
    pub spiking: Vec<usize>,
    pub encoder: usize,
    pub head: usize,
    /// Synaptic fan-out per neuron: entry 0 for the input pixels, then one
    /// per spiking layer.
    pub fan_out: Vec<Vec<u32>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerPlan {
    pub input: Vec<usize>,
    pub output: Vec<usize>,
    /// `(weight, bias)` indices into the parameter list.
    pub params: Option<(usize, usize)>,
    pub conv: Option<ConvGeometry>,
}

impl Plan {
    pub fn new(spec: &NetworkSpec) -> Result<Self> {
        if spec.input.contains(&0) {
            return Err(Error::config("network.input", "extents must be positive"));
        }
        let heads = spec.layers.iter().filter(|l| matches!(l, Layer::Head { .. })).count();
        if heads != 1 || !matches!(spec.layers.last(), Some(Layer::Head { .. })) {
            return Err(Error::config("network.layers", "exactly one head is required and it must be last"));
        }
        let mut shape = spec.input.to_vec();
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut param_shapes = Vec::new();
        let mut spiking = Vec::new();
        for (i, layer) in spec.layers.iter().enumerate() {
            let dim_err = |msg: String| Error::Dimension(format!("layer {i} ({layer:?}): {msg}"));
            if let Some(lif) = layer.lif() {
                lif.validate()?;
                spiking.push(i);
            }
            let input = shape.clone();
            let mut params = None;
            let mut conv = None;
            let mut add_params = |w: Vec<usize>, b: usize| {
                param_shapes.push(w);
                param_shapes.push(vec![b]);
                params = Some((param_shapes.len() - 2, param_shapes.len() - 1));
            };
            let output = match *layer {
                Layer::Conv { filters, kernel, stride, padding, .. } => {
                    if filters == 0 {
                        return Err(dim_err("zero filters".into()));
                    }
                    let geo = ConvGeometry::new(&shape, filters, kernel, stride, padding)
                        .map_err(|e| dim_err(e.to_string()))?;
                    add_params(geo.kernel_shape().to_vec(), filters);
                    conv = Some(geo);
                    geo.output_shape().to_vec()
                }
                Layer::AvgPool { size } => {
                    let &[c, h, w] = shape.as_slice() else {
                        return Err(dim_err(format!("pooling needs c×h×w, got {shape:?}")));
                    };
                    if size == 0 || h / size == 0 || w / size == 0 {
                        return Err(dim_err(format!("pool {size} too large for {shape:?}")));
                    }
                    vec![c, h / size, w / size]
                }
                Layer::Flatten => vec![shape.iter().product()],
                Layer::Dense { units: n, .. } | Layer::Head { classes: n } => {
                    let &[width] = shape.as_slice() else {
                        return Err(dim_err(format!("needs a flat input, got {shape:?}")));
                    };
                    if n == 0 {
                        return Err(dim_err("zero units".into()));
                    }
                    add_params(vec![width, n], n);
                    vec![n]
                }
            };
            layers.push(LayerPlan { input, output: output.clone(), params, conv });
            shape = output;
        }
        if spiking.is_empty() {
            return Err(Error::config("network.layers", "no spiking layer"));
        }
        let encoder = spec.layers.iter().position(Layer::is_weighted).expect("head is weighted");
        if !matches!(spec.layers[encoder], Layer::Conv { .. } | Layer::Dense { .. }) {
            return Err(Error::config("network.layers", "the first weighted layer must spike"));
        }
        let head = spec.layers.len() - 1;
        let mut plan = Plan { layers, param_shapes, spiking, encoder, head, fan_out: Vec::new() };
        let mut fan_out = vec![plan.fan_out_from(spec, None)];
        for &l in &plan.spiking {
            fan_out.push(plan.fan_out_from(spec, Some(l)));
        }
        plan.fan_out = fan_out;
        Ok(plan)
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes.iter().map(|s| s.iter().product::<usize>()).sum()
    }

    pub fn spiking_layers(&self) -> usize {
        self.spiking.len()
    }

    /// Fan-out of every neuron leaving `source` (`None` = the input). Each
    /// neuron is followed through pooling and flattening to the next weighted
    /// layer, whose connections it then feeds.
    fn fan_out_from(&self, spec: &NetworkSpec, source: Option<usize>) -> Vec<u32> {
        let (start, shape) = match source {
            None => (0, spec.input.to_vec()),
            Some(l) => (l + 1, self.layers[l].output.clone()),
        };
        let n: usize = shape.iter().product();
        // position of each source neuron in the current activation, if it survives
        let mut pos: Vec<Option<usize>> = (0..n).map(Some).collect();
        let mut cur = shape;
        for (li, layer) in spec.layers.iter().enumerate().skip(start) {
            match layer {
                Layer::AvgPool { size } => {
                    let (h, w) = (cur[1], cur[2]);
                    let out = &self.layers[li].output;
                    let (oh, ow) = (out[1], out[2]);
                    for p in pos.iter_mut() {
                        *p = p.and_then(|i| {
                            let (c, y, x) = (i / (h * w), (i / w) % h, i % w);
                            let (py, px) = (y / size, x / size);
                            (py < oh && px < ow).then_some((c * oh + py) * ow + px)
                        });
                    }
                    cur = out.clone();
                }
                Layer::Flatten => cur = self.layers[li].output.clone(),
                Layer::Conv { .. } => {
                    let geo = self.layers[li].conv.expect("conv geometry");
                    let (h, w) = (cur[1], cur[2]);
                    return pos
                        .iter()
                        .map(|p| {
                            p.map_or(0, |i| {
                                let (y, x) = ((i / w) % h, i % w);
                                (geo.taps_at(y, x) * geo.out_channels) as u32
                            })
                        })
                        .collect();
                }
                Layer::Dense { units: u, .. } | Layer::Head { classes: u } => {
                    return pos.iter().map(|p| p.map_or(0, |_| *u as u32)).collect();
                }
            }
        }
        vec![0; n]
    }
}

/// Parameter tensors in declaration order: weight then bias per weighted layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub tensors: Vec<Tensor>,
}

impl Params {
    /// Fan-in-scaled uniform weights `U(±sqrt(6/fan_in))`, zero biases.
    pub fn init(plan: &Plan, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Vec::with_capacity(plan.param_shapes.len());
        for lp in plan.layers.iter() {
            let Some((wi, bi)) = lp.params else { continue };
            let wshape = &plan.param_shapes[wi];
            let fan_in: usize = match wshape.len() {
                4 => wshape[1] * wshape[2] * wshape[3],
                _ => wshape[0],
            };
            let bound = (6.0 / fan_in as f64).sqrt();
            let n = wshape.iter().product();
            let w = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
            tensors.push(Tensor::new(wshape, w).expect("shape"));
            tensors.push(Tensor::zeros(&plan.param_shapes[bi]));
        }
        Params { tensors }
    }

    pub fn check_against(&self, plan: &Plan) -> Result<()> {
        if self.tensors.len() != plan.param_shapes.len() {
            return Err(Error::Integrity(format!(
                "expected {} parameter tensors, found {}",
                plan.param_shapes.len(),
                self.tensors.len()
            )));
        }
        for (i, (t, s)) in self.tensors.iter().zip(&plan.param_shapes).enumerate() {
            if t.shape() != s.as_slice() {
                return Err(Error::Integrity(format!(
                    "parameter {i} has shape {:?}, spec needs {s:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Values rounded through `f32`, as stored in checkpoints.
    pub fn quantized(&self) -> Params {
        Params { tensors: self.tensors.iter().map(|t| t.map(|v| v as f32 as f64)).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_plan_shapes() {
        let plan = Plan::new(&NetworkSpec::toy(3)).unwrap();
        assert_eq!(plan.layers[0].output, vec![16, 7, 7]);
        assert_eq!(plan.layers[1].output, vec![32, 7, 7]);
        assert_eq!(plan.layers[2].output, vec![32, 3, 3]);
        assert_eq!(plan.layers[3].output, vec![288]);
        assert_eq!(plan.layers[5].output, vec![3]);
        assert_eq!(plan.spiking, vec![0, 1, 4]);
        assert_eq!(plan.param_shapes.len(), 8);
        assert_eq!(plan.fan_out.len(), 4);
        // dense layer feeds the 3-way head
        assert!(plan.fan_out[3].iter().all(|&f| f == 3));
        // pooling crops row/column 6 of the 7×7 conv map
        let conv_fo = &plan.fan_out[2];
        assert_eq!(conv_fo[0], 128);
        assert_eq!(conv_fo[6], 0);
    }

    #[test]
    fn head_must_be_unique_and_last() {
        let mut spec = NetworkSpec::toy(3);
        spec.layers.swap(4, 5);
        assert!(matches!(Plan::new(&spec), Err(Error::Config { .. })));
        let mut spec = NetworkSpec::toy(3);
        spec.layers.insert(4, Layer::Head { classes: 2 });
        assert!(Plan::new(&spec).is_err());
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let spec = NetworkSpec {
            input: [1, 4, 4],
            layers: vec![Layer::Dense { units: 4, lif: LifParams::default() }, Layer::Head { classes: 2 }],
        };
        let err = Plan::new(&spec).unwrap_err().to_string();
        assert!(err.contains("layer 0"), "{err}");
    }

    #[test]
    fn lif_params_validated() {
        let bad = LifParams { tau: 1.5, ..LifParams::default() };
        assert!(bad.validate().is_err());
        let bad = LifParams { v_thr: 0.0, ..LifParams::default() };
        assert!(bad.validate().is_err());
        assert!(LifParams { tau: 1.0, ..LifParams::default() }.validate().is_ok());
    }

    #[test]
    fn init_is_seeded() {
        let plan = Plan::new(&NetworkSpec::toy(3)).unwrap();
        assert_eq!(Params::init(&plan, 4), Params::init(&plan, 4));
        assert_ne!(Params::init(&plan, 4), Params::init(&plan, 5));
        Params::init(&plan, 4).check_against(&plan).unwrap();
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = NetworkSpec::toy(5);
        let back: NetworkSpec = serde_json::from_str(&spec.to_json()).unwrap();
        assert_eq!(spec, back);
    }
}
