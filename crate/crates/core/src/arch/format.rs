//! The line-oriented architecture file format.
//!
//! ```text
//! # comment
//! nc: 10
//! scales:
//!   n: [0.33, 0.25, 1024]
//! backbone:
//!   - [-1, 1, Conv, [64, 3, 2]]
//! head:
//!   - [[-1, 6], 1, Concat, [1]]
//! ```
//!
//! Every row is `[from, repeats, kind, [args]]`. `from` is `-1` (the
//! previous row, or the image for row 0) or an earlier absolute index, or a
//! list of those. Argument values are integers, floats, `True`/`False`,
//! `None`, quoted strings and the identifier `nc`.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::zoo::VariantKind;

/// One argument value.
#[derive(Clone, Debug, PartialEq)]
pub enum ArgValue {
    Int(i64),
    Float(f64),
    Bool(bool),
    None,
    Str(String),
    Ident(String),
    List(Vec<ArgValue>),
}

impl ArgValue {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            ArgValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    fn as_number(&self) -> Option<f64> {
        match self {
            ArgValue::Int(v) => Some(*v as f64),
            ArgValue::Float(v) => Some(*v),
            _ => None,
        }
    }
}

impl fmt::Display for ArgValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArgValue::Int(v) => write!(f, "{v}"),
            ArgValue::Float(v) => write!(f, "{v:?}"),
            ArgValue::Bool(true) => f.write_str("True"),
            ArgValue::Bool(false) => f.write_str("False"),
            ArgValue::None => f.write_str("None"),
            ArgValue::Str(s) => write!(f, "\"{s}\""),
            ArgValue::Ident(s) => f.write_str(s),
            ArgValue::List(items) => {
                f.write_str("[")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str("]")
            }
        }
    }
}

/// Layer kinds understood by the builder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModuleKind {
    Conv,
    C2f,
    Sppf,
    Upsample,
    Concat,
    Detect,
    QMix(VariantKind),
}

impl ModuleKind {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "Conv" => ModuleKind::Conv,
            "C2f" => ModuleKind::C2f,
            "SPPF" => ModuleKind::Sppf,
            "nn.Upsample" | "Upsample" => ModuleKind::Upsample,
            "Concat" => ModuleKind::Concat,
            "Detect" => ModuleKind::Detect,
            "QMixBlock" => ModuleKind::QMix(VariantKind::QMixBlock),
            "QMixSin" => ModuleKind::QMix(VariantKind::QMixSin),
            "QMixScaled" => ModuleKind::QMix(VariantKind::QMixScaled),
            "QMixFull" => ModuleKind::QMix(VariantKind::QMixFull),
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ModuleKind::Conv => "Conv",
            ModuleKind::C2f => "C2f",
            ModuleKind::Sppf => "SPPF",
            ModuleKind::Upsample => "nn.Upsample",
            ModuleKind::Concat => "Concat",
            ModuleKind::Detect => "Detect",
            ModuleKind::QMix(v) => v.name(),
        }
    }

    /// Whether the first argument is a channel width subject to scaling.
    pub fn has_width(self) -> bool {
        matches!(
            self,
            ModuleKind::Conv | ModuleKind::C2f | ModuleKind::Sppf | ModuleKind::QMix(_)
        )
    }

    /// Whether `repeats` above one is meaningful.
    pub fn repeatable(self) -> bool {
        matches!(self, ModuleKind::C2f | ModuleKind::QMix(VariantKind::QMixFull))
    }
}

/// Source of a row's input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Source {
    One(isize),
    Many(Vec<isize>),
}

impl Source {
    pub fn indices(&self) -> Vec<isize> {
        match self {
            Source::One(i) => vec![*i],
            Source::Many(v) => v.clone(),
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::One(i) => write!(f, "{i}"),
            Source::Many(v) => {
                let parts: Vec<String> = v.iter().map(|i| i.to_string()).collect();
                write!(f, "[{}]", parts.join(", "))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Section {
    Backbone,
    Head,
}

/// One `[from, repeats, kind, [args]]` row.
#[derive(Clone, Debug)]
pub struct Row {
    /// 1-based source line; ignored by equality.
    pub line: usize,
    pub section: Section,
    pub from: Source,
    pub repeats: usize,
    pub kind: ModuleKind,
    pub args: Vec<ArgValue>,
}

impl PartialEq for Row {
    fn eq(&self, other: &Self) -> bool {
        self.section == other.section
            && self.from == other.from
            && self.repeats == other.repeats
            && self.kind == other.kind
            && self.args == other.args
    }
}

/// `(depth_multiple, width_multiple, max_channels)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scale {
    pub depth: f64,
    pub width: f64,
    pub max_channels: usize,
}

/// A parsed architecture file.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchSpec {
    pub nc: usize,
    pub scales: BTreeMap<String, Scale>,
    pub rows: Vec<Row>,
    /// Preset already applied by [`super::resolve_scaling`].
    pub resolved: Option<String>,
}

impl ArchSpec {
    /// The reference YOLOv8 architecture shipped with the crate.
    pub fn yolov8() -> Self {
        parse_arch(YOLOV8).expect("bundled architecture parses")
    }

    /// Serializes back into the file format.
    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "nc: {}", self.nc)?;
        if !self.scales.is_empty() {
            writeln!(f, "scales:")?;
            for (name, s) in &self.scales {
                writeln!(f, "  {name}: [{:?}, {:?}, {}]", s.depth, s.width, s.max_channels)?;
            }
        }
        for (section, title) in [(Section::Backbone, "backbone"), (Section::Head, "head")] {
            let rows: Vec<&Row> = self.rows.iter().filter(|r| r.section == section).collect();
            if rows.is_empty() {
                continue;
            }
            writeln!(f, "{title}:")?;
            for r in rows {
                writeln!(
                    f,
                    "  - [{}, {}, {}, {}]",
                    r.from,
                    r.repeats,
                    r.kind.name(),
                    ArgValue::List(r.args.clone())
                )?;
            }
        }
        Ok(())
    }
}

pub const YOLOV8: &str = include_str!("../../data/yolov8.arch");

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

struct Cursor<'a> {
    s: &'a [u8],
    pos: usize,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn new(s: &'a str, line: usize) -> Self {
        Self {
            s: s.as_bytes(),
            pos: 0,
            line,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn at_end(&mut self) -> bool {
        self.peek().is_none()
    }

    fn value(&mut self) -> Result<ArgValue> {
        match self.peek() {
            None => Err(perr(self.line, "expected a value, found end of line")),
            Some(b'[') => {
                self.pos += 1;
                let mut items = Vec::new();
                if self.peek() == Some(b']') {
                    self.pos += 1;
                    return Ok(ArgValue::List(items));
                }
                loop {
                    items.push(self.value()?);
                    match self.peek() {
                        Some(b',') => self.pos += 1,
                        Some(b']') => {
                            self.pos += 1;
                            return Ok(ArgValue::List(items));
                        }
                        _ => return Err(perr(self.line, "expected `,` or `]` in list")),
                    }
                }
            }
            Some(q @ (b'"' | b'\'')) => {
                self.pos += 1;
                let start = self.pos;
                while self.pos < self.s.len() && self.s[self.pos] != q {
                    self.pos += 1;
                }
                if self.pos == self.s.len() {
                    return Err(perr(self.line, "unterminated string"));
                }
                let text = String::from_utf8_lossy(&self.s[start..self.pos]).into_owned();
                self.pos += 1;
                Ok(ArgValue::Str(text))
            }
            Some(c) if c == b'-' || c == b'+' || c == b'.' || c.is_ascii_digit() => {
                let start = self.pos;
                while self.pos < self.s.len()
                    && (self.s[self.pos].is_ascii_alphanumeric() || b"+-.".contains(&self.s[self.pos]))
                {
                    self.pos += 1;
                }
                let tok = std::str::from_utf8(&self.s[start..self.pos]).unwrap_or_default();
                if tok.contains(['.', 'e', 'E']) {
                    tok.parse::<f64>()
                        .map(ArgValue::Float)
                        .map_err(|_| perr(self.line, format!("malformed number `{tok}`")))
                } else {
                    tok.parse::<i64>()
                        .map(ArgValue::Int)
                        .map_err(|_| perr(self.line, format!("malformed number `{tok}`")))
                }
            }
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while self.pos < self.s.len()
                    && (self.s[self.pos].is_ascii_alphanumeric() || b"_.".contains(&self.s[self.pos]))
                {
                    self.pos += 1;
                }
                let tok = std::str::from_utf8(&self.s[start..self.pos]).unwrap_or_default();
                Ok(match tok {
                    "True" | "true" => ArgValue::Bool(true),
                    "False" | "false" => ArgValue::Bool(false),
                    "None" | "null" => ArgValue::None,
                    _ => ArgValue::Ident(tok.to_string()),
                })
            }
            Some(c) => Err(perr(self.line, format!("unexpected character `{}`", c as char))),
        }
    }
}

fn strip_comment(line: &str) -> &str {
    let mut quote = None;
    for (i, c) in line.char_indices() {
        match (quote, c) {
            (None, '#') => return &line[..i],
            (None, '"' | '\'') => quote = Some(c),
            (Some(q), c) if c == q => quote = None,
            _ => {}
        }
    }
    line
}

fn parse_value(text: &str, line: usize) -> Result<ArgValue> {
    let mut cur = Cursor::new(text, line);
    let v = cur.value()?;
    if !cur.at_end() {
        return Err(perr(line, "trailing characters after value"));
    }
    Ok(v)
}

fn to_index(v: &ArgValue, line: usize) -> Result<isize> {
    v.as_int()
        .map(|i| i as isize)
        .ok_or_else(|| perr(line, format!("layer index must be an integer, found `{v}`")))
}

fn int_arg(kind: ModuleKind, args: &[ArgValue], i: usize, line: usize, positive: bool) -> Result<()> {
    match args.get(i) {
        Some(ArgValue::Int(v)) if !positive || *v > 0 => Ok(()),
        Some(ArgValue::Ident(n)) if n == "nc" && kind == ModuleKind::Detect => Ok(()),
        Some(v) => Err(perr(
            line,
            format!("{} argument {i} must be a positive integer, found `{v}`", kind.name()),
        )),
        None => Ok(()),
    }
}

fn check_args(kind: ModuleKind, args: &[ArgValue], line: usize) -> Result<()> {
    let (min, max) = match kind {
        ModuleKind::Conv => (1, 3),
        ModuleKind::C2f => (1, 2),
        ModuleKind::Sppf => (1, 2),
        ModuleKind::Upsample => (0, 3),
        ModuleKind::Concat => (0, 1),
        ModuleKind::Detect => (1, 1),
        ModuleKind::QMix(_) => (1, 2),
    };
    if args.len() < min || args.len() > max {
        return Err(perr(
            line,
            format!("{} takes {min} to {max} arguments, found {}", kind.name(), args.len()),
        ));
    }
    match kind {
        ModuleKind::Conv | ModuleKind::Sppf | ModuleKind::QMix(_) | ModuleKind::Detect => {
            for i in 0..args.len() {
                int_arg(kind, args, i, line, true)?;
            }
        }
        ModuleKind::C2f => {
            int_arg(kind, args, 0, line, true)?;
            if let Some(v) = args.get(1) {
                if !matches!(v, ArgValue::Bool(_)) {
                    return Err(perr(line, format!("C2f shortcut must be True or False, found `{v}`")));
                }
            }
        }
        ModuleKind::Upsample => {
            if let Some(f) = args.get(1) {
                if f.as_number() != Some(2.0) {
                    return Err(perr(line, format!("only scale factor 2 is supported, found `{f}`")));
                }
            }
            if let Some(m) = args.get(2) {
                if *m != ArgValue::Str("nearest".into()) {
                    return Err(perr(line, format!("only nearest upsampling is supported, found `{m}`")));
                }
            }
        }
        ModuleKind::Concat => {
            if let Some(d) = args.first() {
                if d.as_int() != Some(1) {
                    return Err(perr(
                        line,
                        format!("only channel concatenation (dim 1) is supported, found `{d}`"),
                    ));
                }
            }
        }
    }
    Ok(())
}

fn parse_row(text: &str, line: usize, section: Section, index: usize) -> Result<Row> {
    let items = match parse_value(text, line)? {
        ArgValue::List(items) if items.len() == 4 => items,
        _ => {
            return Err(perr(
                line,
                "a row must be a list of four items [from, repeats, kind, [args]]",
            ))
        }
    };
    let from = match &items[0] {
        ArgValue::List(v) if !v.is_empty() => Source::Many(v.iter().map(|x| to_index(x, line)).collect::<Result<_>>()?),
        v => Source::One(to_index(v, line)?),
    };
    for i in from.indices() {
        if i == -1 {
            if index == 0 && matches!(from, Source::Many(_)) {
                return Err(perr(line, "the image input cannot be concatenated"));
            }
        } else if i < 0 {
            return Err(perr(
                line,
                format!("relative index {i} is not supported; use -1 or an absolute index"),
            ));
        } else if i as usize >= index {
            return Err(perr(line, format!("forward reference to layer {i} from layer {index}")));
        }
    }
    let repeats = match items[1].as_int() {
        Some(n) if n >= 1 => n as usize,
        _ => {
            return Err(perr(
                line,
                format!("repeats must be an integer >= 1, found `{}`", items[1]),
            ))
        }
    };
    let kind = match &items[2] {
        ArgValue::Ident(name) | ArgValue::Str(name) => {
            ModuleKind::parse(name).ok_or_else(|| perr(line, format!("unknown module kind `{name}`")))?
        }
        v => return Err(perr(line, format!("module kind must be a name, found `{v}`"))),
    };
    if repeats > 1 && !kind.repeatable() {
        return Err(perr(line, format!("{} does not accept repeats > 1", kind.name())));
    }
    let args = match &items[3] {
        ArgValue::List(a) => a.clone(),
        v => return Err(perr(line, format!("arguments must be a list, found `{v}`"))),
    };
    check_args(kind, &args, line)?;
    match (kind, &from) {
        (ModuleKind::Concat | ModuleKind::Detect, _) => {}
        (_, Source::Many(v)) if v.len() > 1 => return Err(perr(line, format!("{} takes a single input", kind.name()))),
        _ => {}
    }
    Ok(Row {
        line,
        section,
        from,
        repeats,
        kind,
        args,
    })
}

fn parse_scale(text: &str, line: usize) -> Result<Scale> {
    let items = match parse_value(text, line)? {
        ArgValue::List(items) if items.len() == 3 => items,
        _ => {
            return Err(perr(
                line,
                "a scale preset is [depth_multiple, width_multiple, max_channels]",
            ))
        }
    };
    let depth = items[0].as_number().filter(|v| *v > 0.0);
    let width = items[1].as_number().filter(|v| *v > 0.0);
    let max = items[2].as_int().filter(|v| *v > 0);
    match (depth, width, max) {
        (Some(depth), Some(width), Some(max)) => Ok(Scale {
            depth,
            width,
            max_channels: max as usize,
        }),
        _ => Err(perr(
            line,
            "scale multiples must be positive numbers and max_channels a positive integer",
        )),
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Block {
    Top,
    Scales,
    Rows(Section),
}

/// Parses an architecture file, reporting the first error with its line.
pub fn parse_arch(text: &str) -> Result<ArchSpec> {
    let mut nc = None;
    let mut scales = BTreeMap::new();
    let mut rows: Vec<Row> = Vec::new();
    let mut block = Block::Top;
    let mut seen_head = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = strip_comment(raw);
        if content.trim().is_empty() {
            continue;
        }
        let indented = content.starts_with([' ', '\t']);
        let body = content.trim();
        if let Some(row) = body.strip_prefix('-') {
            let Block::Rows(section) = block else {
                return Err(perr(line, "row outside a backbone: or head: section"));
            };
            rows.push(parse_row(row, line, section, rows.len())?);
            continue;
        }
        let Some((key, rest)) = body.split_once(':') else {
            return Err(perr(
                line,
                format!("expected `key: value` or a `- [...]` row, found `{body}`"),
            ));
        };
        let (key, rest) = (key.trim(), rest.trim());
        if indented && block == Block::Scales {
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(perr(line, format!("malformed preset name `{key}`")));
            }
            if scales.insert(key.to_string(), parse_scale(rest, line)?).is_some() {
                return Err(perr(line, format!("duplicate preset `{key}`")));
            }
            continue;
        }
        if indented {
            return Err(perr(line, format!("unexpected indented entry `{key}`")));
        }
        match key {
            "nc" => {
                let v = parse_value(rest, line)?
                    .as_int()
                    .filter(|v| *v > 0)
                    .ok_or_else(|| perr(line, "nc must be a positive integer"))?;
                nc = Some(v as usize);
                block = Block::Top;
            }
            "scales" | "backbone" | "head" if !rest.is_empty() => {
                return Err(perr(line, format!("`{key}:` must be followed by indented entries")));
            }
            "scales" => block = Block::Scales,
            "backbone" => {
                if seen_head || !rows.is_empty() {
                    return Err(perr(line, "backbone: must come before any rows"));
                }
                block = Block::Rows(Section::Backbone);
            }
            "head" => {
                if seen_head {
                    return Err(perr(line, "duplicate head: section"));
                }
                seen_head = true;
                block = Block::Rows(Section::Head);
            }
            _ => return Err(perr(line, format!("unknown key `{key}`"))),
        }
    }
    if rows.is_empty() {
        return Err(perr(text.lines().count().max(1), "no layer rows"));
    }
    Ok(ArchSpec {
        nc: nc.unwrap_or(super::DEFAULT_NC),
        scales,
        rows,
        resolved: None,
    })
}
