//! Architecture notation, e.g.
//! `IMG-(Conv64-ReLU-LRN)x2-MaxPool-(FC1024-ReLU-Dropout)x2-FC20-Softmax`.
//!
//! ```text
//! arch  := "IMG" ("-" unit)+
//! unit  := token | "(" token ("-" token)* ")" ["x" INT]
//! token := ("Conv" INT | "ReLU" | "MaxPool" | "LRN" | "Dropout" | "FC" INT | "Softmax") [overrides]
//! overrides := "[" key "=" value ("," key "=" value)* "]"
//! ```
//!
//! Override keys: `Conv[k,kh,kw,s,p]`, `MaxPool[k,s]`, `Dropout[p]`,
//! `LRN[k,n,alpha,beta]`. Layers without overrides use the defaults
//! (3x3/s1/p1 conv, 2x2/s2 pool, p=0.5 dropout, k=2 n=5 alpha=1e-4 beta=0.75 LRN).
//! `xK` repeats the preceding parenthesized group; repeated layers get
//! independent parameters.

use std::fmt;

use crate::error::{Error, Result};
use crate::layers::{ConvConfig, DropoutConfig, LrnConfig, PoolConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv(ConvConfig),
    ReLU,
    MaxPool(PoolConfig),
    Lrn(LrnConfig),
    Dropout(DropoutConfig),
    Fc { neurons: usize },
    Softmax,
}

impl LayerSpec {
    /// Canonical token text, overrides included only where they differ from defaults.
    pub fn token(&self) -> String {
        match self {
            LayerSpec::Conv(cfg) => {
                let mut ov = Vec::new();
                let (kh, kw) = cfg.kernel;
                if kh == kw {
                    if kh != ConvConfig::DEFAULT_KERNEL {
                        ov.push(format!("k={kh}"));
                    }
                } else {
                    ov.push(format!("kh={kh}"));
                    ov.push(format!("kw={kw}"));
                }
                if cfg.stride != ConvConfig::DEFAULT_STRIDE {
                    ov.push(format!("s={}", cfg.stride));
                }
                if cfg.pad != ConvConfig::DEFAULT_PAD {
                    ov.push(format!("p={}", cfg.pad));
                }
                with_overrides(format!("Conv{}", cfg.filters), ov)
            }
            LayerSpec::ReLU => "ReLU".into(),
            LayerSpec::MaxPool(cfg) => {
                let d = PoolConfig::default();
                let mut ov = Vec::new();
                if cfg.kernel != d.kernel {
                    ov.push(format!("k={}", cfg.kernel));
                }
                if cfg.stride != d.stride {
                    ov.push(format!("s={}", cfg.stride));
                }
                with_overrides("MaxPool".into(), ov)
            }
            LayerSpec::Lrn(cfg) => {
                let d = LrnConfig::default();
                let mut ov = Vec::new();
                if cfg.k != d.k {
                    ov.push(format!("k={}", cfg.k));
                }
                if cfg.n != d.n {
                    ov.push(format!("n={}", cfg.n));
                }
                if cfg.alpha != d.alpha {
                    ov.push(format!("alpha={}", cfg.alpha));
                }
                if cfg.beta != d.beta {
                    ov.push(format!("beta={}", cfg.beta));
                }
                with_overrides("LRN".into(), ov)
            }
            LayerSpec::Dropout(cfg) => {
                let ov = if cfg.p != DropoutConfig::default().p { vec![format!("p={}", cfg.p)] } else { vec![] };
                with_overrides("Dropout".into(), ov)
            }
            LayerSpec::Fc { neurons } => format!("FC{neurons}"),
            LayerSpec::Softmax => "Softmax".into(),
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, LayerSpec::Conv(_))
    }

    pub fn is_fc(&self) -> bool {
        matches!(self, LayerSpec::Fc { .. })
    }
}

fn with_overrides(base: String, ov: Vec<String>) -> String {
    if ov.is_empty() {
        base
    } else {
        format!("{base}[{}]", ov.join(","))
    }
}

/// Per-sample activation shape `(channels, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(c: usize, h: usize, w: usize) -> Self {
        Shape { c, h, w }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.h == 1 && self.w == 1 {
            write!(f, "({})", self.c)
        } else {
            write!(f, "({}x{}x{})", self.c, self.h, self.w)
        }
    }
}

/// Default network input: RGB at 128x128.
pub const DEFAULT_INPUT: Shape = Shape::new(3, 128, 128);

/// A shape-checked architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
    /// Output shape of each layer.
    pub shapes: Vec<Shape>,
    pub param_count: u64,
}

impl NetworkSpec {
    pub fn new(input: Shape, layers: Vec<LayerSpec>) -> Result<Self> {
        check_softmax_placement(&layers, None)?;
        let (shapes, param_count) = infer_shapes(&layers, input)?;
        Ok(NetworkSpec { input, layers, shapes, param_count })
    }

    pub fn output(&self) -> Shape {
        self.shapes.last().copied().unwrap_or(self.input)
    }

    pub fn ends_with_softmax(&self) -> bool {
        matches!(self.layers.last(), Some(LayerSpec::Softmax))
    }

    /// Weight+bias count of each layer, aligned with `layers`.
    pub fn layer_params(&self) -> Vec<u64> {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let input = if i == 0 { self.input } else { self.shapes[i - 1] };
                match l {
                    LayerSpec::Conv(cfg) => (cfg.filters * (input.c * cfg.kernel.0 * cfg.kernel.1 + 1)) as u64,
                    LayerSpec::Fc { neurons } => (*neurons as u64) * (input.len() as u64 + 1),
                    _ => 0,
                }
            })
            .collect()
    }

    /// Number of classes when the network ends in a softmax head.
    pub fn classes(&self) -> Option<usize> {
        self.ends_with_softmax().then(|| self.output().c)
    }
}

/// Parses against the default 3x128x128 input.
pub fn parse(text: &str) -> Result<NetworkSpec> {
    parse_with_input(text, DEFAULT_INPUT)
}

pub fn parse_with_input(text: &str, input: Shape) -> Result<NetworkSpec> {
    let layers = parse_layers(text)?;
    let (shapes, param_count) = infer_shapes(&layers, input)?;
    Ok(NetworkSpec { input, layers, shapes, param_count })
}

/// Grammar-level parse with group expansion; no shape inference.
pub fn parse_layers(text: &str) -> Result<Vec<LayerSpec>> {
    let mut p = Parser { chars: text.chars().collect(), pos: 0 };
    p.arch()
}

/// Canonical form: flattened, no groups or repetition.
pub fn render(spec: &NetworkSpec) -> String {
    render_layers(&spec.layers)
}

pub fn render_layers(layers: &[LayerSpec]) -> String {
    let mut s = String::from("IMG");
    for l in layers {
        s.push('-');
        s.push_str(&l.token());
    }
    s
}

fn shape_err(layer: usize, spec: &LayerSpec, message: impl Into<String>) -> Error {
    Error::Shape { layer, token: spec.token(), message: message.into() }
}

/// Output shape of every layer and the total weight+bias count.
pub fn infer_shapes(layers: &[LayerSpec], input: Shape) -> Result<(Vec<Shape>, u64)> {
    if input.is_empty() {
        return Err(Error::InvalidShape(format!("empty input {input}")));
    }
    let mut cur = input;
    let mut shapes = Vec::with_capacity(layers.len());
    let mut params = 0u64;
    for (i, l) in layers.iter().enumerate() {
        let wrap = |e: Error| match e {
            Error::InvalidShape(m) | Error::InvalidArgument(m) => shape_err(i, l, m),
            other => other,
        };
        cur = match l {
            LayerSpec::Conv(cfg) => {
                let (oh, ow) = cfg.output_hw(cur.h, cur.w).map_err(wrap)?;
                let (kh, kw) = cfg.kernel;
                params += (cfg.filters * cur.c * kh * kw + cfg.filters) as u64;
                Shape::new(cfg.filters, oh, ow)
            }
            LayerSpec::MaxPool(cfg) => {
                let (oh, ow) = cfg.output_hw(cur.h, cur.w).map_err(wrap)?;
                Shape::new(cur.c, oh, ow)
            }
            LayerSpec::Lrn(cfg) => {
                cfg.validate().map_err(wrap)?;
                cur
            }
            LayerSpec::Dropout(cfg) => {
                cfg.validate().map_err(wrap)?;
                cur
            }
            LayerSpec::ReLU => cur,
            LayerSpec::Fc { neurons } => {
                if *neurons == 0 {
                    return Err(shape_err(i, l, "FC needs at least one neuron"));
                }
                params += (*neurons as u64) * (cur.len() as u64) + *neurons as u64;
                Shape::new(*neurons, 1, 1)
            }
            LayerSpec::Softmax => {
                if cur.h != 1 || cur.w != 1 {
                    return Err(shape_err(i, l, format!("softmax needs a flat (C) input, got {cur}")));
                }
                cur
            }
        };
        shapes.push(cur);
    }
    Ok((shapes, params))
}

fn check_softmax_placement(layers: &[LayerSpec], offsets: Option<&[usize]>) -> Result<()> {
    for (i, l) in layers.iter().enumerate() {
        if matches!(l, LayerSpec::Softmax) && i + 1 != layers.len() {
            let offset = offsets.map(|o| o[i]).unwrap_or(0);
            return Err(Error::Parse { offset, message: "Softmax must be the final layer".into() });
        }
    }
    Ok(())
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
}

impl Parser {
    fn err<T>(&self, offset: usize, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse { offset, message: message.into() })
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            return Ok(());
        }
        match self.peek() {
            Some(found) => self.err(self.pos, format!("expected '{c}', found '{found}'")),
            None => self.err(self.pos, format!("expected '{c}', found end of input")),
        }
    }

    fn take_while(&mut self, f: impl Fn(char) -> bool) -> String {
        let start = self.pos;
        while self.peek().is_some_and(&f) {
            self.pos += 1;
        }
        self.chars[start..self.pos].iter().collect()
    }

    fn integer(&mut self) -> Result<Option<usize>> {
        let start = self.pos;
        let digits = self.take_while(|c| c.is_ascii_digit());
        if digits.is_empty() {
            return Ok(None);
        }
        digits
            .parse()
            .map(Some)
            .or_else(|_| self.err(start, format!("integer '{digits}' out of range")))
    }

    fn arch(&mut self) -> Result<Vec<LayerSpec>> {
        let word = self.take_while(|c| c.is_ascii_alphabetic());
        if word != "IMG" {
            return self.err(0, "architecture must start with \"IMG\"");
        }
        let mut layers = Vec::new();
        let mut offsets = Vec::new();
        if self.peek().is_none() {
            return self.err(self.pos, "expected at least one layer after \"IMG\"");
        }
        while self.peek().is_some() {
            self.expect('-')?;
            self.unit(&mut layers, &mut offsets)?;
        }
        check_softmax_placement(&layers, Some(&offsets))?;
        Ok(layers)
    }

    fn unit(&mut self, layers: &mut Vec<LayerSpec>, offsets: &mut Vec<usize>) -> Result<()> {
        if self.peek() == Some('(') {
            let open = self.pos;
            self.pos += 1;
            let mut group = Vec::new();
            let mut group_offsets = Vec::new();
            loop {
                group_offsets.push(self.pos);
                group.push(self.token()?);
                if self.eat(')') {
                    break;
                }
                if self.peek().is_none() {
                    return self.err(open, "unbalanced '(': missing ')'");
                }
                self.expect('-')?;
            }
            let mut repeat = 1;
            if self.peek() == Some('x') {
                let at = self.pos;
                self.pos += 1;
                repeat = match self.integer()? {
                    Some(k) if k >= 1 => k,
                    _ => return self.err(at, "expected a positive repeat count after 'x'"),
                };
            }
            for _ in 0..repeat {
                layers.extend(group.iter().cloned());
                offsets.extend(group_offsets.iter().copied());
            }
        } else {
            offsets.push(self.pos);
            layers.push(self.token()?);
        }
        Ok(())
    }

    fn token(&mut self) -> Result<LayerSpec> {
        let start = self.pos;
        if self.peek() == Some(')') {
            return self.err(start, "unbalanced ')'");
        }
        let name = self.take_while(|c| c.is_ascii_alphabetic());
        let count = self.integer()?;
        let needs_count = matches!(name.as_str(), "Conv" | "FC");
        let known = matches!(name.as_str(), "Conv" | "ReLU" | "MaxPool" | "LRN" | "Dropout" | "FC" | "Softmax");
        if !known {
            let shown: String = if name.is_empty() {
                self.peek().map(String::from).unwrap_or_else(|| "end of input".into())
            } else {
                name.clone()
            };
            return self.err(start, format!("unknown layer token \"{shown}\""));
        }
        let count = match (needs_count, count) {
            (true, Some(0)) => return self.err(start, format!("{name} count must be positive")),
            (true, Some(c)) => c,
            (true, None) => return self.err(start, format!("{name} requires a count, e.g. {name}64")),
            (false, Some(_)) => return self.err(start, format!("{name} takes no count")),
            (false, None) => 0,
        };
        let overrides = self.overrides()?;
        let mut spec = match name.as_str() {
            "Conv" => LayerSpec::Conv(ConvConfig::new(count)),
            "ReLU" => LayerSpec::ReLU,
            "MaxPool" => LayerSpec::MaxPool(PoolConfig::default()),
            "LRN" => LayerSpec::Lrn(LrnConfig::default()),
            "Dropout" => LayerSpec::Dropout(DropoutConfig::default()),
            "FC" => LayerSpec::Fc { neurons: count },
            _ => LayerSpec::Softmax,
        };
        for (key, value, at) in overrides {
            self.apply_override(&mut spec, &key, &value, at)?;
        }
        let valid = match &spec {
            LayerSpec::Conv(c) => c.validate(),
            LayerSpec::Lrn(c) => c.validate(),
            LayerSpec::Dropout(c) => c.validate(),
            LayerSpec::MaxPool(c) if c.kernel == 0 || c.stride == 0 => {
                Err(Error::InvalidArgument("pool kernel and stride must be positive".into()))
            }
            _ => Ok(()),
        };
        if let Err(e) = valid {
            return self.err(start, e.to_string());
        }
        Ok(spec)
    }

    fn overrides(&mut self) -> Result<Vec<(String, String, usize)>> {
        let mut out = Vec::new();
        if !self.eat('[') {
            return Ok(out);
        }
        loop {
            let at = self.pos;
            let key = self.take_while(|c| c.is_ascii_alphanumeric() || c == '_');
            if key.is_empty() {
                return self.err(at, "expected override key");
            }
            self.expect('=')?;
            // '-' ends a value except inside an exponent such as 1e-4.
            let value = self.take_while(|c| !matches!(c, ',' | ']' | '-' | '(' | ')'));
            let value = self.extend_exponent(value);
            if value.is_empty() {
                return self.err(self.pos, format!("missing value for '{key}'"));
            }
            out.push((key, value, at));
            if self.eat(']') {
                break;
            }
            if self.peek().is_none() {
                return self.err(at, "unterminated '['");
            }
            self.expect(',')?;
        }
        Ok(out)
    }

    fn extend_exponent(&mut self, mut value: String) -> String {
        if (value.ends_with('e') || value.ends_with('E')) && self.peek() == Some('-') {
            self.pos += 1;
            value.push('-');
            value.push_str(&self.take_while(|c| c.is_ascii_digit()));
        }
        value
    }

    fn apply_override(&self, spec: &mut LayerSpec, key: &str, value: &str, at: usize) -> Result<()> {
        let int = || -> Result<usize> {
            value.parse().or_else(|_| self.err(at, format!("'{key}' expects an integer, got '{value}'")))
        };
        let real = || -> Result<f64> {
            value.parse().or_else(|_| self.err(at, format!("'{key}' expects a number, got '{value}'")))
        };
        match (spec, key) {
            (LayerSpec::Conv(c), "k") => {
                let k = int()?;
                c.kernel = (k, k);
            }
            (LayerSpec::Conv(c), "kh") => c.kernel.0 = int()?,
            (LayerSpec::Conv(c), "kw") => c.kernel.1 = int()?,
            (LayerSpec::Conv(c), "s") => c.stride = int()?,
            (LayerSpec::Conv(c), "p") => c.pad = int()?,
            (LayerSpec::MaxPool(c), "k") => c.kernel = int()?,
            (LayerSpec::MaxPool(c), "s") => c.stride = int()?,
            (LayerSpec::Dropout(c), "p") => c.p = real()?,
            (LayerSpec::Lrn(c), "k") => c.k = real()?,
            (LayerSpec::Lrn(c), "n") => c.n = int()?,
            (LayerSpec::Lrn(c), "alpha") => c.alpha = real()?,
            (LayerSpec::Lrn(c), "beta") => c.beta = real()?,
            (s, _) => return self.err(at, format!("unknown override '{key}' for {}", s.token())),
        }
        Ok(())
    }
}
