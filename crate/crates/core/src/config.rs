//! Declarative network description, shape propagation, parameter and MAC
//! accounting, and the MAX78000 deployability check.
//!
//! The text format is one layer per line, `kind arg...`, with `#` comments:
//!
//! ```text
//! name   ref-88
//! input  3 88 88          # channels height width
//! head   4 2 1            # grid S, boxes per cell B, classes C
//! conv3x3 3 16
//! relu
//! maxpool2x2
//! flatten
//! fc 64 256
//! ```

use std::fmt::{self, Write as _};

use crate::error::{Error, Result};
use crate::ops::KERNEL_AREA;
use crate::quant::max_accumulator;

/// Values per box predictor: x, y, w, h, confidence.
pub const BOX_VALUES: usize = 5;
pub const FIRST_CONV_CHANNELS: usize = 16;
pub const WIDEST_CONV_CHANNELS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv3x3 { in_channels: usize, out_channels: usize },
    MaxPool2x2,
    Flatten,
    Fc { in_features: usize, out_features: usize },
    Relu,
}

impl LayerSpec {
    pub fn keyword(&self) -> &'static str {
        match self {
            LayerSpec::Conv3x3 { .. } => "conv3x3",
            LayerSpec::MaxPool2x2 => "maxpool2x2",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Fc { .. } => "fc",
            LayerSpec::Relu => "relu",
        }
    }

    pub fn is_weighted(&self) -> bool {
        matches!(self, LayerSpec::Conv3x3 { .. } | LayerSpec::Fc { .. })
    }

    /// `(weights, biases)` element counts.
    pub fn param_shape(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
            } => (KERNEL_AREA * in_channels * out_channels, out_channels),
            LayerSpec::Fc {
                in_features,
                out_features,
            } => (in_features * out_features, out_features),
            _ => (0, 0),
        }
    }
}

/// YOLO head geometry: an `S x S` grid, `B` boxes and `C` classes per cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadSpec {
    pub grid: usize,
    pub boxes: usize,
    pub classes: usize,
}

impl HeadSpec {
    pub fn cell_len(&self) -> usize {
        self.boxes * BOX_VALUES + self.classes
    }

    pub fn output_len(&self) -> usize {
        self.grid * self.grid * self.cell_len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Chw(usize, usize, usize),
    Flat(usize),
}

impl Shape {
    pub fn elements(&self) -> usize {
        match *self {
            Shape::Chw(c, h, w) => c * h * w,
            Shape::Flat(n) => n,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Chw(c, h, w) => vec![c, h, w],
            Shape::Flat(n) => vec![n],
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Chw(c, h, w) => write!(f, "{c}x{h}x{w}"),
            Shape::Flat(n) => write!(f, "{n}"),
        }
    }
}

/// A validated network: every layer type-checks against the shape flowing
/// into it and the last layer produces exactly the head's output vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    name: Option<String>,
    input: (usize, usize, usize),
    layers: Vec<LayerSpec>,
    head: HeadSpec,
}

pub const REFERENCE_SINGLE_CLASS: &str = include_str!("../configs/ref-88.cfg");
pub const REFERENCE_MULTI_CLASS: &str = include_str!("../configs/ref-88-voc3.cfg");

impl ModelConfig {
    pub fn new(name: Option<String>, input: (usize, usize, usize), layers: Vec<LayerSpec>, head: HeadSpec) -> Result<Self> {
        let cfg = Self {
            name,
            input,
            layers,
            head,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Single-class detector, `S=4, B=2, C=1`.
    pub fn reference_single_class() -> Self {
        parse_model_config(REFERENCE_SINGLE_CLASS).expect("bundled config is valid")
    }

    /// Three-class detector, `S=4, B=1, C=3`.
    pub fn reference_multi_class() -> Self {
        parse_model_config(REFERENCE_MULTI_CLASS).expect("bundled config is valid")
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn input(&self) -> (usize, usize, usize) {
        self.input
    }

    pub fn input_shape(&self) -> Shape {
        let (c, h, w) = self.input;
        Shape::Chw(c, h, w)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn head(&self) -> HeadSpec {
        self.head
    }

    /// Layers that own parameters, in declaration order.
    pub fn weighted_layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().filter(|l| l.is_weighted())
    }

    /// Output shape of every layer, in order.
    pub fn shapes(&self) -> Vec<Shape> {
        propagate(self.input_shape(), &self.layers).expect("validated at construction")
    }

    fn validate(&self) -> Result<()> {
        let (c, h, w) = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Config("input dimensions must be positive".into()));
        }
        let head = self.head;
        if head.grid == 0 || head.boxes == 0 || head.classes == 0 {
            return Err(Error::Config("head S, B and C must be positive".into()));
        }
        let shapes = propagate(self.input_shape(), &self.layers)?;
        match shapes.last() {
            Some(Shape::Flat(n)) if *n == head.output_len() => {}
            Some(other) => {
                return Err(Error::Config(format!(
                    "final layer produces {other}, head S·S·(B·5+C) = {}",
                    head.output_len()
                )))
            }
            None => return Err(Error::Config("no layers".into())),
        }
        if !matches!(self.layers.last(), Some(LayerSpec::Fc { .. })) {
            return Err(Error::Config("network must end with a linear fc layer".into()));
        }
        let convs: Vec<usize> = self
            .layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Conv3x3 { out_channels, .. } => Some(*out_channels),
                _ => None,
            })
            .collect();
        if let Some(&first) = convs.first() {
            if first != FIRST_CONV_CHANNELS {
                return Err(Error::Config(format!(
                    "first conv must have {FIRST_CONV_CHANNELS} output channels, has {first}"
                )));
            }
            let widest = convs.iter().copied().max().unwrap_or(0);
            if widest != WIDEST_CONV_CHANNELS {
                return Err(Error::Config(format!(
                    "widest conv must have {WIDEST_CONV_CHANNELS} output channels, has {widest}"
                )));
            }
        }
        for l in self.weighted_layers() {
            let fan_in = match *l {
                LayerSpec::Conv3x3 { in_channels, .. } => in_channels * KERNEL_AREA,
                LayerSpec::Fc { in_features, .. } => in_features,
                _ => unreachable!(),
            };
            if max_accumulator(fan_in, 0) > i32::MAX as i64 {
                return Err(Error::Config(format!("{l:?} can overflow a 32-bit int8 accumulator")));
            }
        }
        Ok(())
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(name) = &self.name {
            let _ = writeln!(s, "name {name}");
        }
        let (c, h, w) = self.input;
        let _ = writeln!(s, "input {c} {h} {w}");
        let _ = writeln!(s, "head {} {} {}", self.head.grid, self.head.boxes, self.head.classes);
        for l in &self.layers {
            let _ = match *l {
                LayerSpec::Conv3x3 {
                    in_channels,
                    out_channels,
                } => writeln!(s, "conv3x3 {in_channels} {out_channels}"),
                LayerSpec::Fc {
                    in_features,
                    out_features,
                } => writeln!(s, "fc {in_features} {out_features}"),
                other => writeln!(s, "{}", other.keyword()),
            };
        }
        s
    }
}

fn propagate(input: Shape, layers: &[LayerSpec]) -> Result<Vec<Shape>> {
    let mut shape = input;
    let mut out = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        let fail = |why: String| Error::Config(format!("layer {} ({}): {why}", i + 1, layer.keyword()));
        shape = match (*layer, shape) {
            (
                LayerSpec::Conv3x3 {
                    in_channels,
                    out_channels,
                },
                Shape::Chw(c, h, w),
            ) => {
                if in_channels == 0 || out_channels == 0 {
                    return Err(fail("channel counts must be positive".into()));
                }
                if c != in_channels {
                    return Err(fail(format!("expects {in_channels} input channels, receives {c}")));
                }
                Shape::Chw(out_channels, h, w)
            }
            (LayerSpec::MaxPool2x2, Shape::Chw(c, h, w)) => {
                if h < 2 || w < 2 {
                    return Err(fail(format!("cannot pool a {h}x{w} map")));
                }
                Shape::Chw(c, h / 2, w / 2)
            }
            (LayerSpec::Flatten, s @ Shape::Chw(..)) => Shape::Flat(s.elements()),
            (
                LayerSpec::Fc {
                    in_features,
                    out_features,
                },
                Shape::Flat(n),
            ) => {
                if in_features == 0 || out_features == 0 {
                    return Err(fail("feature counts must be positive".into()));
                }
                if n != in_features {
                    return Err(fail(format!("expects {in_features} inputs, receives {n}")));
                }
                Shape::Flat(out_features)
            }
            (LayerSpec::Relu, s) => s,
            (_, s) => return Err(fail(format!("not applicable to a {s} tensor"))),
        };
        out.push(shape);
    }
    Ok(out)
}

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

/// Parses the line format, then shape-checks the result.
pub fn parse_model_config(text: &str) -> Result<ModelConfig> {
    let mut name = None;
    let mut input = None;
    let mut head = None;
    let mut layers = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let content = raw.split('#').next().unwrap_or("");
        // tokens paired with their 1-based column
        let mut tokens = Vec::new();
        let mut start = None;
        for (i, ch) in content.char_indices() {
            match (ch.is_whitespace(), start) {
                (false, None) => start = Some(i),
                (true, Some(s)) => {
                    tokens.push((s + 1, &content[s..i]));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            tokens.push((s + 1, &content[s..]));
        }
        let Some(&(kcol, kind)) = tokens.first() else {
            continue;
        };
        let args = &tokens[1..];

        let numbers = |expected: usize| -> Result<Vec<usize>> {
            if args.len() != expected {
                let col = args.get(expected).map_or(kcol + kind.len(), |a| a.0);
                return Err(parse_err(
                    lineno,
                    col,
                    format!("`{kind}` takes {expected} argument(s), found {}", args.len()),
                ));
            }
            args.iter()
                .map(|&(col, tok)| {
                    tok.parse::<usize>()
                        .map_err(|_| parse_err(lineno, col, format!("expected a non-negative integer, found `{tok}`")))
                })
                .collect()
        };

        match kind {
            "name" => {
                if args.len() != 1 {
                    return Err(parse_err(lineno, kcol, "`name` takes exactly one token"));
                }
                name = Some(args[0].1.to_string());
            }
            "input" => {
                let v = numbers(3)?;
                if input.replace((v[0], v[1], v[2])).is_some() {
                    return Err(parse_err(lineno, kcol, "duplicate `input`"));
                }
            }
            "head" => {
                let v = numbers(3)?;
                let spec = HeadSpec {
                    grid: v[0],
                    boxes: v[1],
                    classes: v[2],
                };
                if head.replace(spec).is_some() {
                    return Err(parse_err(lineno, kcol, "duplicate `head`"));
                }
            }
            "conv3x3" => {
                let v = numbers(2)?;
                layers.push(LayerSpec::Conv3x3 {
                    in_channels: v[0],
                    out_channels: v[1],
                });
            }
            "maxpool2x2" => {
                numbers(0)?;
                layers.push(LayerSpec::MaxPool2x2);
            }
            "flatten" => {
                numbers(0)?;
                layers.push(LayerSpec::Flatten);
            }
            "relu" => {
                numbers(0)?;
                layers.push(LayerSpec::Relu);
            }
            "fc" => {
                let v = numbers(2)?;
                layers.push(LayerSpec::Fc {
                    in_features: v[0],
                    out_features: v[1],
                });
            }
            other => {
                let message = match other.strip_prefix("conv") {
                    Some(k) if !k.is_empty() => format!("unsupported kernel `{k}`: only 3x3 convolutions are allowed"),
                    _ => format!("unknown layer kind `{other}`"),
                };
                return Err(parse_err(lineno, kcol, message));
            }
        }
    }

    let input = input.ok_or_else(|| Error::Config("missing `input C H W` line".into()))?;
    let head = head.ok_or_else(|| Error::Config("missing `head S B C` line".into()))?;
    ModelConfig::new(name, input, layers, head)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Count {
    pub per_layer: Vec<u64>,
    pub total: u64,
}

impl Count {
    fn from_layers(per_layer: Vec<u64>) -> Self {
        let total = per_layer.iter().sum();
        Self { per_layer, total }
    }
}

/// Weights plus biases per layer; pooling, flatten and ReLU contribute 0.
pub fn count_params(cfg: &ModelConfig) -> Count {
    Count::from_layers(
        cfg.layers()
            .iter()
            .map(|l| {
                let (w, b) = l.param_shape();
                (w + b) as u64
            })
            .collect(),
    )
}

/// Multiply-accumulates per inference. Only conv and fc layers count.
pub fn count_macs(cfg: &ModelConfig) -> Count {
    let shapes = cfg.shapes();
    Count::from_layers(
        cfg.layers()
            .iter()
            .zip(&shapes)
            .map(|(l, out)| match (*l, *out) {
                (
                    LayerSpec::Conv3x3 {
                        in_channels,
                        out_channels,
                    },
                    Shape::Chw(_, h, w),
                ) => (h * w * KERNEL_AREA * in_channels * out_channels) as u64,
                (
                    LayerSpec::Fc {
                        in_features,
                        out_features,
                    },
                    _,
                ) => (in_features * out_features) as u64,
                _ => 0,
            })
            .collect(),
    )
}

pub const WEIGHT_BYTES_PER_PARAM: u64 = 1;
pub const BIAS_BYTES_PER_PARAM: u64 = 4;

/// Deployed int8 footprint: one byte per weight, four per bias.
pub fn weight_bytes(cfg: &ModelConfig) -> u64 {
    cfg.weighted_layers()
        .map(|l| {
            let (w, b) = l.param_shape();
            w as u64 * WEIGHT_BYTES_PER_PARAM + b as u64 * BIAS_BYTES_PER_PARAM
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviceProfile {
    Max78000,
}

impl DeviceProfile {
    pub fn name(&self) -> &'static str {
        match self {
            DeviceProfile::Max78000 => "max78000",
        }
    }

    /// Accelerator weight memory, bytes.
    pub fn weight_budget(&self) -> u64 {
        match self {
            DeviceProfile::Max78000 => 442 * 1024,
        }
    }

    /// Inputs must be strictly smaller than this `(height, width)`.
    pub fn input_limit(&self) -> (usize, usize) {
        match self {
            DeviceProfile::Max78000 => (90, 91),
        }
    }
}

impl std::str::FromStr for DeviceProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "max78000" => Ok(DeviceProfile::Max78000),
            other => Err(Error::InvalidArgument(format!("unknown device profile `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeployIssue {
    WeightMemory { bytes: u64, budget: u64 },
    InputSize { height: usize, width: usize, limit: (usize, usize) },
}

impl DeployIssue {
    pub fn reason(&self) -> &'static str {
        match self {
            DeployIssue::WeightMemory { .. } => "weight memory",
            DeployIssue::InputSize { .. } => "input size",
        }
    }
}

impl fmt::Display for DeployIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeployIssue::WeightMemory { bytes, budget } => {
                write!(f, "weight memory: {bytes} bytes exceeds budget of {budget} bytes")
            }
            DeployIssue::InputSize { height, width, limit } => write!(
                f,
                "input size: {height}x{width} not below the {}x{} limit",
                limit.0, limit.1
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeployReport {
    pub profile: DeviceProfile,
    pub weight_bytes: u64,
    pub weight_budget: u64,
    pub issues: Vec<DeployIssue>,
}

impl DeployReport {
    pub fn passed(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for DeployReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "profile {}: {}",
            self.profile.name(),
            if self.passed() { "PASS" } else { "FAIL" }
        )?;
        writeln!(f, "  int8 weight bytes: {} / {}", self.weight_bytes, self.weight_budget)?;
        for issue in &self.issues {
            writeln!(f, "  {issue}")?;
        }
        Ok(())
    }
}

/// Checks weight memory and input size against the device. The operator set
/// is enforced by [`LayerSpec`] itself, so it cannot fail here.
pub fn check_deployability(cfg: &ModelConfig, profile: DeviceProfile) -> DeployReport {
    let bytes = weight_bytes(cfg);
    let budget = profile.weight_budget();
    let mut issues = Vec::new();
    if bytes > budget {
        issues.push(DeployIssue::WeightMemory { bytes, budget });
    }
    let (_, h, w) = cfg.input();
    let limit = profile.input_limit();
    if h >= limit.0 || w >= limit.1 {
        issues.push(DeployIssue::InputSize {
            height: h,
            width: w,
            limit,
        });
    }
    DeployReport {
        profile,
        weight_bytes: bytes,
        weight_budget: budget,
        issues,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_heads() {
        let single = ModelConfig::reference_single_class();
        assert_eq!(single.head().output_len(), 176);
        let multi = ModelConfig::reference_multi_class();
        assert_eq!(multi.head().output_len(), 128);
    }

    #[test]
    fn reference_dimension_chain() {
        let cfg = ModelConfig::reference_single_class();
        let mut sides = vec![cfg.input().1];
        for (l, s) in cfg.layers().iter().zip(cfg.shapes()) {
            if let (LayerSpec::MaxPool2x2, Shape::Chw(_, h, _)) = (l, s) {
                sides.push(h);
            }
        }
        assert_eq!(&sides[..5], &[88, 44, 22, 11, 5]);
    }

    #[test]
    fn rejects_other_kernels_with_position() {
        let text = "input 3 88 88\nhead 4 2 1\n  conv5x5 3 16\n";
        match parse_model_config(text) {
            Err(Error::Parse { line, column, message }) => {
                assert_eq!((line, column), (3, 3));
                assert!(message.contains("3x3"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reports_bad_numbers_and_arity() {
        let err = parse_model_config("input 3 x 88").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, column: 9, .. }), "{err}");
        let err = parse_model_config("input 3 88").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        let err = parse_model_config("bogus").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, column: 1, .. }));
    }

    #[test]
    fn shape_and_head_failures() {
        let bad_chain = "input 3 8 8\nhead 1 1 1\nconv3x3 3 16\nconv3x3 32 128\nflatten\nfc 8192 6\n";
        assert!(matches!(parse_model_config(bad_chain), Err(Error::Config(_))));
        let bad_head = "input 3 8 8\nhead 1 1 1\nconv3x3 3 16\nconv3x3 16 128\nflatten\nfc 8192 7\n";
        let err = parse_model_config(bad_head).unwrap_err();
        assert!(err.to_string().contains("head"), "{err}");
        let fc_on_map = "input 3 8 8\nhead 1 1 1\nfc 192 6\n";
        assert!(parse_model_config(fc_on_map).is_err());
    }

    #[test]
    fn text_round_trip() {
        let cfg = ModelConfig::reference_multi_class();
        assert_eq!(parse_model_config(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn param_formulas_match_enumeration() {
        let cfg = ModelConfig::reference_single_class();
        let counts = count_params(&cfg);
        for (l, &n) in cfg.layers().iter().zip(&counts.per_layer) {
            // enumerate every weight index the kernels would touch
            let enumerated = match *l {
                LayerSpec::Conv3x3 {
                    in_channels,
                    out_channels,
                } => {
                    let mut k = 0u64;
                    for _o in 0..out_channels {
                        for _i in 0..in_channels {
                            for _t in 0..9 {
                                k += 1;
                            }
                        }
                        k += 1;
                    }
                    k
                }
                LayerSpec::Fc {
                    in_features,
                    out_features,
                } => (0..out_features).map(|_| in_features as u64 + 1).sum(),
                _ => 0,
            };
            assert_eq!(n, enumerated);
        }
        assert_eq!(counts.per_layer[0], 448);
        assert_eq!(*counts.per_layer.last().unwrap(), 45_232);
    }

    #[test]
    fn mac_examples() {
        let cfg = ModelConfig::reference_single_class();
        let macs = count_macs(&cfg);
        assert_eq!(macs.per_layer[0], 3_345_408);
        assert_eq!(*macs.per_layer.last().unwrap(), 45_056);
        for (l, &m) in cfg.layers().iter().zip(&macs.per_layer) {
            if matches!(l, LayerSpec::MaxPool2x2 | LayerSpec::Relu | LayerSpec::Flatten) {
                assert_eq!(m, 0);
            }
        }
    }

    #[test]
    fn empty_layer_count_is_zero() {
        assert_eq!(Count::from_layers(vec![]).total, 0);
    }

    #[test]
    fn deployability() {
        for cfg in [ModelConfig::reference_single_class(), ModelConfig::reference_multi_class()] {
            let r = check_deployability(&cfg, DeviceProfile::Max78000);
            assert!(r.passed(), "{r}");
            assert!(r.weight_bytes <= 452_608);
        }
        let big_input = REFERENCE_SINGLE_CLASS.replace("input 3 88 88", "input 3 96 96");
        // 96 pools to 6x6 before the last pool, so the head input stays 3·3·16
        let big_input = big_input.replace("fc 64 256", "fc 144 256");
        let cfg = parse_model_config(&big_input).unwrap();
        let r = check_deployability(&cfg, DeviceProfile::Max78000);
        assert_eq!(r.issues.iter().map(|i| i.reason()).collect::<Vec<_>>(), ["input size"]);
    }
}
