//! Experiment configuration: flat `key = value` text with `[section]`
//! headers.
//!
//! ```text
//! command = capacity
//!
//! [kernel]
//! alpha = 2
//! dim = 3
//!
//! [run]
//! resolution = 500
//! seed = 7
//!
//! [params]
//! shape = target
//!
//! [shape.target]
//! type = sphere
//! center = 0, 0, 0
//! radius = 1
//! ```
//!
//! Points are comma-separated coordinates; lists of points are separated by
//! `;`. Lines starting with `#` are comments.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::geometry::{Point, RotationBody, ShapeSpec};
use crate::kernel::KernelParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Capacity,
    Balayage,
    HarmonicMass,
    Thinness,
    Wiener,
    KelvinCheck,
    Support,
    Exhaust,
    Continuity,
    Subadd,
    ExampleEx,
    McHit,
}

impl Command {
    pub const ALL: [Command; 12] = [
        Command::Capacity,
        Command::Balayage,
        Command::HarmonicMass,
        Command::Thinness,
        Command::Wiener,
        Command::KelvinCheck,
        Command::Support,
        Command::Exhaust,
        Command::Continuity,
        Command::Subadd,
        Command::ExampleEx,
        Command::McHit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Capacity => "capacity",
            Command::Balayage => "balayage",
            Command::HarmonicMass => "harmonic-mass",
            Command::Thinness => "thinness",
            Command::Wiener => "wiener",
            Command::KelvinCheck => "kelvin-check",
            Command::Support => "support",
            Command::Exhaust => "exhaust",
            Command::Continuity => "continuity",
            Command::Subadd => "subadd",
            Command::ExampleEx => "example-ex",
            Command::McHit => "mc-hit",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown command `{s}`"))
    }
}

/// A value with the line it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub line: usize,
    pub value: String,
}

/// Raw sections in file order of keys.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawConfig {
    pub sections: BTreeMap<String, Section>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Section {
    entries: BTreeMap<String, Entry>,
    #[serde(skip)]
    header_line: usize,
}

fn parse_err(line: usize, message: impl Into<String>) -> LabError {
    LabError::Parse {
        line,
        message: message.into(),
    }
}

/// Split text into sections; keys before the first header go to `""`.
pub fn parse_sections(text: &str) -> Result<RawConfig> {
    let mut raw = RawConfig::default();
    let mut current = String::new();
    raw.sections.insert(current.clone(), Section::default());
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        if let Some(rest) = t.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| parse_err(line_no, "unterminated section header"))?
                .trim();
            if name.is_empty() {
                return Err(parse_err(line_no, "empty section name"));
            }
            if raw.sections.contains_key(name) {
                return Err(parse_err(line_no, format!("duplicate section [{name}]")));
            }
            current = name.to_string();
            raw.sections.insert(
                current.clone(),
                Section {
                    entries: BTreeMap::new(),
                    header_line: line_no,
                },
            );
            continue;
        }
        let (k, v) = t
            .split_once('=')
            .ok_or_else(|| parse_err(line_no, format!("expected `key = value`, found `{t}`")))?;
        let key = k.trim();
        if key.is_empty() {
            return Err(parse_err(line_no, "empty key"));
        }
        let value = v.split(" #").next().unwrap_or("").trim().to_string();
        let section = raw
            .sections
            .get_mut(&current)
            .expect("current section exists");
        if section.entries.contains_key(key) {
            return Err(parse_err(line_no, format!("duplicate key `{key}`")));
        }
        section.entries.insert(
            key.to_string(),
            Entry {
                line: line_no,
                value,
            },
        );
    }
    Ok(raw)
}

fn parse_value<T: FromStr>(e: &Entry, key: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    e.value
        .parse::<T>()
        .map_err(|err| parse_err(e.line, format!("`{key}`: {err}")))
}

fn parse_numbers(e: &Entry, key: &str, s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|c| {
            let c = c.trim();
            let v: f64 = c
                .parse()
                .map_err(|err| parse_err(e.line, format!("`{key}`: `{c}`: {err}")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(parse_err(e.line, format!("`{key}`: non-finite value")))
            }
        })
        .collect()
}

impl Section {
    pub fn entry(&self, key: &str) -> Option<&Entry> {
        self.entries.get(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = (&String, &Entry)> {
        self.entries.iter()
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(
            key.to_string(),
            Entry {
                line: 0,
                value: value.into(),
            },
        );
    }

    pub fn header_line(&self) -> usize {
        self.header_line
    }

    fn require(&self, key: &str) -> Result<&Entry> {
        self.entry(key)
            .ok_or_else(|| parse_err(self.header_line, format!("missing key `{key}`")))
    }

    fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        for (k, e) in &self.entries {
            if !allowed.contains(&k.as_str()) {
                return Err(parse_err(e.line, format!("unknown key `{k}`")));
            }
        }
        Ok(())
    }

    pub fn str(&self, key: &str) -> Option<&str> {
        self.entry(key).map(|e| e.value.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        self.entry(key).map(|e| parse_value(e, key)).transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn bool(&self, key: &str) -> Result<Option<bool>> {
        self.entry(key)
            .map(|e| match e.value.as_str() {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                other => Err(parse_err(
                    e.line,
                    format!("`{key}`: expected a boolean, found `{other}`"),
                )),
            })
            .transpose()
    }

    pub fn numbers(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.entry(key)
            .map(|e| parse_numbers(e, key, &e.value))
            .transpose()
    }

    /// A point of dimension `dim`.
    pub fn point(&self, key: &str, dim: usize) -> Result<Option<Point>> {
        let Some(e) = self.entry(key) else {
            return Ok(None);
        };
        let v = parse_numbers(e, key, &e.value)?;
        if v.len() != dim {
            return Err(parse_err(
                e.line,
                format!("`{key}`: expected {dim} coordinates, found {}", v.len()),
            ));
        }
        Ok(Some(Point::new(v)))
    }

    /// `;`-separated points of dimension `dim`.
    pub fn points(&self, key: &str, dim: usize) -> Result<Option<Vec<Point>>> {
        let Some(e) = self.entry(key) else {
            return Ok(None);
        };
        e.value
            .split(';')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                let v = parse_numbers(e, key, s)?;
                if v.len() != dim {
                    return Err(parse_err(
                        e.line,
                        format!("`{key}`: expected {dim} coordinates, found {}", v.len()),
                    ));
                }
                Ok(Point::new(v))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    /// Parse error anchored at `key` (or the section header if absent).
    pub fn error(&self, key: &str, message: impl fmt::Display) -> LabError {
        let line = self.entry(key).map_or(self.header_line, |e| e.line);
        parse_err(line, format!("`{key}`: {message}"))
    }
}

/// A fully resolved experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub command: Command,
    pub kernel: KernelParams,
    pub shapes: BTreeMap<String, ShapeSpec>,
    pub resolution: Option<usize>,
    pub seed: u64,
    pub tolerances: BTreeMap<String, f64>,
    pub params: Section,
    #[serde(skip)]
    pub output: Option<PathBuf>,
    /// Whether CSV side files are written next to the report.
    pub csv: bool,
}

const DEFAULT_SEED: u64 = 1;

impl ExperimentConfig {
    /// Parse text; relative file references resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let raw = parse_sections(text)?;
        let empty = Section::default();
        let global = raw.sections.get("").unwrap_or(&empty);
        let run = raw.sections.get("run").unwrap_or(&empty);
        for (name, sec) in &raw.sections {
            let known = matches!(
                name.as_str(),
                "" | "kernel" | "run" | "params" | "tolerances"
            ) || name.starts_with("shape.");
            if !known {
                return Err(parse_err(
                    sec.header_line,
                    format!("unknown section [{name}]"),
                ));
            }
        }
        global.reject_unknown(&["command"])?;
        run.reject_unknown(&["command", "resolution", "seed", "output", "csv"])?;

        let cmd_entry = match (global.entry("command"), run.entry("command")) {
            (Some(_), Some(e)) => return Err(parse_err(e.line, "`command` given twice")),
            (Some(e), None) | (None, Some(e)) => e,
            (None, None) => return Err(parse_err(1, "missing key `command`")),
        };
        let command: Command = parse_value(cmd_entry, "command")?;

        let kernel = match raw.sections.get("kernel") {
            Some(k) => {
                k.reject_unknown(&["alpha", "dim"])?;
                let alpha = k.get_or("alpha", 2.0)?;
                let dim = k.get_or("dim", 3usize)?;
                KernelParams::new(alpha, dim)
                    .map_err(|e| parse_err(k.header_line, e.to_string()))?
            }
            None => KernelParams::newtonian(),
        };

        let resolution = run.get::<usize>("resolution")?;
        if resolution == Some(0) {
            return Err(run.error("resolution", "must be at least 1"));
        }
        let seed = run.get_or("seed", DEFAULT_SEED)?;
        let output = run.str("output").map(|p| base_dir.join(p));
        let csv = run.bool("csv")?.unwrap_or(false);

        let mut tolerances = BTreeMap::new();
        if let Some(t) = raw.sections.get("tolerances") {
            for (k, e) in t.keys() {
                let v: f64 = parse_value(e, k)?;
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(parse_err(
                        e.line,
                        format!("`{k}`: tolerance must be finite and nonnegative"),
                    ));
                }
                tolerances.insert(k.clone(), v);
            }
        }

        let blocks: BTreeMap<&str, &Section> = raw
            .sections
            .iter()
            .filter_map(|(n, s)| n.strip_prefix("shape.").map(|name| (name, s)))
            .collect();
        let mut shapes = BTreeMap::new();
        for name in blocks.keys() {
            let mut stack = Vec::new();
            let shape = resolve_shape(name, &blocks, &mut stack, kernel.dim(), base_dir)?;
            shapes.insert(name.to_string(), shape);
        }

        let mut params = raw.sections.get("params").cloned().unwrap_or_default();
        if let Some(e) = params.entries.get_mut("source_file") {
            e.value = base_dir.join(&e.value).display().to_string();
        }

        Ok(ExperimentConfig {
            command,
            kernel,
            shapes,
            resolution,
            seed,
            tolerances,
            params,
            output,
            csv,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Apply new kernel parameters; shapes must still match the dimension.
    pub fn set_kernel(&mut self, alpha: Option<f64>, dim: Option<usize>) -> Result<()> {
        let k = KernelParams::new(
            alpha.unwrap_or(self.kernel.alpha()),
            dim.unwrap_or(self.kernel.dim()),
        )?;
        for (name, s) in &self.shapes {
            if s.dim().is_some_and(|d| d != k.dim()) {
                return Err(LabError::param(format!(
                    "shape `{name}` does not live in dimension {}",
                    k.dim()
                )));
            }
        }
        self.kernel = k;
        Ok(())
    }

    pub fn tolerance(&self, key: &str, default: f64) -> f64 {
        self.tolerances.get(key).copied().unwrap_or(default)
    }

    /// Shape named by parameter `key`, or the only shape when `key` is
    /// absent and exactly one is defined.
    pub fn shape(&self, key: &str) -> Result<&ShapeSpec> {
        match self.params.str(key) {
            Some(name) => self
                .shapes
                .get(name)
                .ok_or_else(|| self.params.error(key, format!("no shape named `{name}`"))),
            None if self.shapes.contains_key(key) => Ok(&self.shapes[key]),
            None if self.shapes.len() == 1 => Ok(self.shapes.values().next().expect("one shape")),
            None => Err(self
                .params
                .error(key, "missing, and the shape is ambiguous")),
        }
    }

    /// SHA-256 of the canonical JSON form of everything that affects the
    /// results.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

fn resolve_shape(
    name: &str,
    blocks: &BTreeMap<&str, &Section>,
    stack: &mut Vec<String>,
    dim: usize,
    base_dir: &Path,
) -> Result<ShapeSpec> {
    let sec = *blocks
        .get(name)
        .ok_or_else(|| parse_err(0, format!("no shape named `{name}`")))?;
    if stack.iter().any(|s| s == name) {
        return Err(parse_err(
            sec.header_line,
            format!("shape `{name}` refers to itself"),
        ));
    }
    stack.push(name.to_string());
    let kind = sec.require("type")?;
    let point = |key: &str| -> Result<Point> {
        sec.point(key, dim)?
            .ok_or_else(|| sec.error(key, "missing"))
    };
    let real = |key: &str| -> Result<f64> {
        sec.get::<f64>(key)?
            .ok_or_else(|| sec.error(key, "missing"))
    };
    let shape = match kind.value.as_str() {
        "ball" | "sphere" => {
            sec.reject_unknown(&["type", "center", "radius"])?;
            let center = point("center")?;
            let radius = real("radius")?;
            if kind.value == "ball" {
                ShapeSpec::Ball { center, radius }
            } else {
                ShapeSpec::Sphere { center, radius }
            }
        }
        "box" => {
            sec.reject_unknown(&["type", "lo", "hi"])?;
            ShapeSpec::Box {
                lo: point("lo")?,
                hi: point("hi")?,
            }
        }
        "rotation_body" => {
            sec.reject_unknown(&["type", "family", "s", "x1_lo", "x1_hi"])?;
            let family: u8 = sec
                .get("family")?
                .ok_or_else(|| sec.error("family", "missing"))?;
            let body = RotationBody::new(family, real("s")?, real("x1_lo")?, real("x1_hi")?)
                .map_err(|e| parse_err(sec.header_line, e.to_string()))?;
            ShapeSpec::RotationBody(body)
        }
        "union" => {
            sec.reject_unknown(&["type", "parts"])?;
            let e = sec.require("parts")?;
            let parts = e
                .value
                .split(',')
                .map(|p| p.trim())
                .filter(|p| !p.is_empty())
                .map(|p| {
                    if !blocks.contains_key(p) {
                        return Err(parse_err(e.line, format!("no shape named `{p}`")));
                    }
                    resolve_shape(p, blocks, stack, dim, base_dir)
                })
                .collect::<Result<Vec<_>>>()?;
            ShapeSpec::Union { parts }
        }
        "inverted" => {
            sec.reject_unknown(&["type", "base", "center"])?;
            let e = sec.require("base")?;
            if !blocks.contains_key(e.value.as_str()) {
                return Err(parse_err(e.line, format!("no shape named `{}`", e.value)));
            }
            ShapeSpec::Inverted {
                base: Box::new(resolve_shape(&e.value, blocks, stack, dim, base_dir)?),
                center: point("center")?,
            }
        }
        "point_cloud" => {
            sec.reject_unknown(&["type", "file", "points", "radii"])?;
            match sec.entry("file") {
                Some(e) => {
                    let path = base_dir.join(&e.value);
                    let f = std::fs::File::open(&path)
                        .map_err(|err| parse_err(e.line, format!("{}: {err}", path.display())))?;
                    crate::io::read_point_cloud_csv(f)
                        .map_err(|err| parse_err(e.line, format!("{}: {err}", path.display())))?
                }
                None => {
                    let points = sec
                        .points("points", dim)?
                        .ok_or_else(|| sec.error("points", "missing"))?;
                    let cell_radii = sec
                        .numbers("radii")?
                        .ok_or_else(|| sec.error("radii", "missing"))?;
                    ShapeSpec::PointCloud { points, cell_radii }
                }
            }
        }
        other => {
            return Err(parse_err(
                kind.line,
                format!("unknown shape type `{other}`"),
            ))
        }
    };
    if shape.dim().is_some_and(|d| d != dim) {
        return Err(parse_err(
            sec.header_line,
            format!("shape `{name}` does not live in dimension {dim}"),
        ));
    }
    shape
        .validate()
        .map_err(|e| parse_err(sec.header_line, format!("shape `{name}`: {e}")))?;
    stack.pop();
    Ok(shape)
}
