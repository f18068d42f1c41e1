use std::fmt;
use std::str::FromStr;

use crate::activation::ActivationKind;
use crate::conv::ConvSpec;
use crate::error::{Error, Result};

/// The qp-map input plane carries `qp / QP_MAP_SCALE`.
pub const QP_MAP_SCALE: f64 = 51.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Plain filter; ignores the QP.
    Vanilla,
    /// Every conv output channel scaled by `1 / (1 + θ·q)`.
    QpAdaptive,
    /// Constant QP plane concatenated to the input.
    QpMap,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Vanilla, Mode::QpAdaptive, Mode::QpMap];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Vanilla => "vanilla",
            Mode::QpAdaptive => "qp-adaptive",
            Mode::QpMap => "qp-map",
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            Mode::Vanilla => 0,
            Mode::QpAdaptive => 1,
            Mode::QpMap => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Mode::ALL.into_iter().find(|m| m.code() == code)
    }

    pub fn needs_qp(&self) -> bool {
        !matches!(self, Mode::Vanilla)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Mode::Vanilla),
            "qp-adaptive" | "adaptive" | "proposed" => Ok(Mode::QpAdaptive),
            "qp-map" | "qpmap" => Ok(Mode::QpMap),
            _ => Err(Error::invalid("mode", format!("unknown mode `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Arch {
    Dcad,
    Vrcnn,
    /// Depthwise-separable stand-in; the real layer layout is unpublished.
    LiuDsc { width: usize },
    /// Residual-block stand-in with leaky ReLU.
    TucodecMini { blocks: usize },
}

impl Arch {
    pub const DEFAULT_LIU_WIDTH: usize = 32;
    pub const DEFAULT_TUCODEC_BLOCKS: usize = 6;

    pub fn name(&self) -> &'static str {
        match self {
            Arch::Dcad => "dcad",
            Arch::Vrcnn => "vrcnn",
            Arch::LiuDsc { .. } => "liu",
            Arch::TucodecMini { .. } => "tucodec",
        }
    }

    /// The single size knob of the stand-ins (0 for exact reconstructions).
    pub fn size_param(&self) -> usize {
        match *self {
            Arch::Dcad | Arch::Vrcnn => 0,
            Arch::LiuDsc { width } => width,
            Arch::TucodecMini { blocks } => blocks,
        }
    }

    pub fn from_name(name: &str, size_param: Option<usize>) -> Result<Self> {
        Ok(match name {
            "dcad" => Arch::Dcad,
            "vrcnn" => Arch::Vrcnn,
            "liu" => Arch::LiuDsc {
                width: size_param.unwrap_or(Self::DEFAULT_LIU_WIDTH),
            },
            "tucodec" => Arch::TucodecMini {
                blocks: size_param.unwrap_or(Self::DEFAULT_TUCODEC_BLOCKS),
            },
            other => return Err(Error::invalid("model", format!("unknown backbone `{other}`"))),
        })
    }

    /// True when the layer layout only approximates the published network.
    pub fn is_approximation(&self) -> bool {
        matches!(self, Arch::LiuDsc { .. } | Arch::TucodecMini { .. })
    }

    /// Published (vanilla, proposed) parameter counts.
    pub fn reference_counts(&self) -> (usize, usize) {
        match self {
            Arch::Dcad => (296_641, 297_218),
            Arch::Vrcnn => (54_512, 54_673),
            Arch::LiuDsc { .. } => (12_266, 12_555),
            Arch::TucodecMini { .. } => (447_681, 448_514),
        }
    }

    pub fn build(&self, mode: Mode) -> Result<ModelSpec> {
        let spec = match *self {
            Arch::Dcad => build_dcad(),
            Arch::Vrcnn => build_vrcnn(),
            Arch::LiuDsc { width } => build_liu_dsc(width)?,
            Arch::TucodecMini { blocks } => build_tucodec_mini(blocks)?,
        };
        Ok(spec.with_mode(mode))
    }
}

/// One node of a backbone graph. Every conv is followed by its modulation
/// (in qp-adaptive mode) and then by the node's activation.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv { conv: ConvSpec, act: ActivationKind },
    /// Branches read the same input; outputs are concatenated in order.
    Parallel { branches: Vec<ConvSpec>, act: ActivationKind },
    /// `act(x + body(x))`.
    Residual { body: Vec<Layer>, act: ActivationKind },
}

impl Layer {
    fn collect_convs(&self, out: &mut Vec<ConvSpec>) {
        match self {
            Layer::Conv { conv, .. } => out.push(*conv),
            Layer::Parallel { branches, .. } => out.extend(branches.iter().copied()),
            Layer::Residual { body, .. } => body.iter().for_each(|l| l.collect_convs(out)),
        }
    }

    fn first_conv_mut(&mut self) -> Option<&mut ConvSpec> {
        match self {
            Layer::Conv { conv, .. } => Some(conv),
            Layer::Parallel { .. } | Layer::Residual { .. } => None,
        }
    }

    /// Output channel count given `input` channels, checking every edge.
    fn check(&self, input: usize) -> Result<usize> {
        let edge = |conv: &ConvSpec| -> Result<()> {
            conv.validate()?;
            if conv.in_channels != input {
                return Err(Error::shape(format!("layer {conv}"), format!("{input} input channels"), conv.in_channels));
            }
            Ok(())
        };
        match self {
            Layer::Conv { conv, act } => {
                act.validate()?;
                edge(conv)?;
                Ok(conv.out_channels)
            }
            Layer::Parallel { branches, act } => {
                act.validate()?;
                if branches.is_empty() {
                    return Err(Error::invalid("model", "parallel node without branches"));
                }
                branches.iter().try_for_each(edge)?;
                Ok(branches.iter().map(|b| b.out_channels).sum())
            }
            Layer::Residual { body, act } => {
                act.validate()?;
                let mut c = input;
                for l in body {
                    c = l.check(c)?;
                }
                if c != input {
                    return Err(Error::shape("residual block", format!("{input} channels"), c));
                }
                Ok(c)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub arch: Arch,
    pub mode: Mode,
    pub layers: Vec<Layer>,
    /// Output = input image + network output.
    pub global_residual: bool,
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        self.arch.name()
    }

    /// Re-targets the spec to another mode; the qp-map plane adds one input
    /// channel to the first layer.
    pub fn with_mode(mut self, mode: Mode) -> Self {
        let was_map = self.mode == Mode::QpMap;
        let is_map = mode == Mode::QpMap;
        if was_map != is_map {
            if let Some(first) = self.layers.first_mut().and_then(Layer::first_conv_mut) {
                if is_map {
                    first.in_channels += 1;
                } else {
                    first.in_channels -= 1;
                }
            }
        }
        self.mode = mode;
        self
    }

    /// Channels fed to the first layer.
    pub fn input_channels(&self) -> usize {
        if self.mode == Mode::QpMap {
            2
        } else {
            1
        }
    }

    /// Convolutions in evaluation order.
    pub fn conv_specs(&self) -> Vec<ConvSpec> {
        let mut out = Vec::new();
        self.layers.iter().for_each(|l| l.collect_convs(&mut out));
        out
    }

    pub fn is_modulated(&self) -> bool {
        self.mode == Mode::QpAdaptive
    }

    /// Sum of output channels over all convolutions.
    pub fn modulated_channels(&self) -> usize {
        self.conv_specs().iter().map(|c| c.out_channels).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == Mode::QpMap && self.layers.first().and_then(|l| match l {
            Layer::Conv { .. } => Some(()),
            _ => None,
        }).is_none()
        {
            return Err(Error::invalid("model", "qp-map mode needs a plain conv as first layer"));
        }
        let mut c = self.input_channels();
        for l in &self.layers {
            c = l.check(c)?;
        }
        if c != 1 {
            return Err(Error::shape("model output", "1 channel", c));
        }
        Ok(())
    }
}

fn conv3(i: usize, o: usize) -> ConvSpec {
    ConvSpec::dense(i, o, 3)
}

/// Ten 3×3 layers 1→64→…→64→1 with ReLU after the first nine.
pub fn build_dcad() -> ModelSpec {
    let mut layers = vec![Layer::Conv {
        conv: conv3(1, 64),
        act: ActivationKind::Relu,
    }];
    for _ in 0..8 {
        layers.push(Layer::Conv {
            conv: conv3(64, 64),
            act: ActivationKind::Relu,
        });
    }
    layers.push(Layer::Conv {
        conv: conv3(64, 1),
        act: ActivationKind::Identity,
    });
    ModelSpec {
        arch: Arch::Dcad,
        mode: Mode::Vanilla,
        layers,
        global_residual: true,
    }
}

/// Four stages with mixed kernel sizes in stages two and three. The
/// published vanilla count (54,512) is the weight total alone, so every
/// layer here is bias-free.
pub fn build_vrcnn() -> ModelSpec {
    let nb = |i, o, k| ConvSpec::dense(i, o, k).without_bias();
    ModelSpec {
        arch: Arch::Vrcnn,
        mode: Mode::Vanilla,
        layers: vec![
            Layer::Conv {
                conv: nb(1, 64, 5),
                act: ActivationKind::Relu,
            },
            Layer::Parallel {
                branches: vec![nb(64, 16, 5), nb(64, 32, 3)],
                act: ActivationKind::Relu,
            },
            Layer::Parallel {
                branches: vec![nb(48, 16, 3), nb(48, 32, 1)],
                act: ActivationKind::Relu,
            },
            Layer::Conv {
                conv: nb(48, 1, 3),
                act: ActivationKind::Identity,
            },
        ],
        global_residual: true,
    }
}

const LIU_DSC_PAIRS: usize = 8;

/// 3×3 stem, eight depthwise+pointwise pairs of `width` channels, 3×3 head.
pub fn build_liu_dsc(width: usize) -> Result<ModelSpec> {
    if width == 0 {
        return Err(Error::invalid("build_liu_dsc", "width must be positive"));
    }
    let mut layers = vec![Layer::Conv {
        conv: conv3(1, width),
        act: ActivationKind::Relu,
    }];
    for _ in 0..LIU_DSC_PAIRS {
        layers.push(Layer::Conv {
            conv: ConvSpec::depthwise(width, 3),
            act: ActivationKind::Identity,
        });
        layers.push(Layer::Conv {
            conv: ConvSpec::dense(width, width, 1),
            act: ActivationKind::Relu,
        });
    }
    layers.push(Layer::Conv {
        conv: conv3(width, 1),
        act: ActivationKind::Identity,
    });
    Ok(ModelSpec {
        arch: Arch::LiuDsc { width },
        mode: Mode::Vanilla,
        layers,
        global_residual: true,
    })
}

const TUCODEC_WIDTH: usize = 64;

/// 3×3 stem, `blocks` two-conv residual blocks with leaky ReLU, 3×3 head.
pub fn build_tucodec_mini(blocks: usize) -> Result<ModelSpec> {
    if blocks == 0 {
        return Err(Error::invalid("build_tucodec_mini", "need at least one block"));
    }
    let w = TUCODEC_WIDTH;
    let leaky = ActivationKind::leaky();
    let mut layers = vec![Layer::Conv {
        conv: conv3(1, w),
        act: leaky,
    }];
    for _ in 0..blocks {
        layers.push(Layer::Residual {
            body: vec![
                Layer::Conv {
                    conv: conv3(w, w),
                    act: leaky,
                },
                Layer::Conv {
                    conv: conv3(w, w),
                    act: ActivationKind::Identity,
                },
            ],
            act: leaky,
        });
    }
    layers.push(Layer::Conv {
        conv: conv3(w, 1),
        act: ActivationKind::Identity,
    });
    Ok(ModelSpec {
        arch: Arch::TucodecMini { blocks },
        mode: Mode::Vanilla,
        layers,
        global_residual: true,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerParams {
    pub conv: ConvSpec,
    pub weights: usize,
    pub biases: usize,
    pub theta: usize,
}

impl LayerParams {
    pub fn total(&self) -> usize {
        self.weights + self.biases + self.theta
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub layers: Vec<LayerParams>,
    pub weights: usize,
    pub biases: usize,
    pub theta: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.weights + self.biases + self.theta
    }
}

pub fn count_params(spec: &ModelSpec) -> ParamCount {
    let layers: Vec<LayerParams> = spec
        .conv_specs()
        .into_iter()
        .map(|conv| LayerParams {
            conv,
            weights: conv.weight_count(),
            biases: conv.bias_count(),
            theta: if spec.is_modulated() { conv.out_channels } else { 0 },
        })
        .collect();
    ParamCount {
        weights: layers.iter().map(|l| l.weights).sum(),
        biases: layers.iter().map(|l| l.biases).sum(),
        theta: layers.iter().map(|l| l.theta).sum(),
        layers,
    }
}
