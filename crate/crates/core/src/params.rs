//! Named trainable tensors and their on-disk checkpoint form.
//!
//! A checkpoint is a directory holding one CTSR file per tensor plus
//! `manifest.txt`, whose lines read `name<TAB>d0xd1x…<TAB>group.kind`.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::io::ctsr;
use crate::tensor::{Graph, Tensor, Var};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    Encoder,
    Decoder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Kind {
    Kernel,
    Bias,
    NormGain,
    NormShift,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Role {
    pub group: Group,
    pub kind: Kind,
}

impl Role {
    pub fn new(group: Group, kind: Kind) -> Self {
        Role { group, kind }
    }

    /// Only convolution kernels are weight-decayed.
    pub fn decays(self) -> bool {
        self.kind == Kind::Kernel
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let g = match self.group {
            Group::Encoder => "encoder",
            Group::Decoder => "decoder",
        };
        let k = match self.kind {
            Kind::Kernel => "kernel",
            Kind::Bias => "bias",
            Kind::NormGain => "norm_gain",
            Kind::NormShift => "norm_shift",
        };
        write!(f, "{g}.{k}")
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::format("manifest", format!("unknown role {s:?}"));
        let (g, k) = s.split_once('.').ok_or_else(bad)?;
        let group = match g {
            "encoder" => Group::Encoder,
            "decoder" => Group::Decoder,
            _ => return Err(bad()),
        };
        let kind = match k {
            "kernel" => Kind::Kernel,
            "bias" => Kind::Bias,
            "norm_gain" => Kind::NormGain,
            "norm_shift" => Kind::NormShift,
            _ => return Err(bad()),
        };
        Ok(Role { group, kind })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub role: Role,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: Role,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && !name.starts_with('.')
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'.' || b == b'_' || b == b'-')
}

pub fn render_manifest(entries: &[ManifestEntry]) -> String {
    entries
        .iter()
        .map(|e| {
            let dims: Vec<String> = e.shape.iter().map(|d| d.to_string()).collect();
            format!("{}\t{}\t{}\n", e.name, dims.join("x"), e.role)
        })
        .collect()
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut out: Vec<ManifestEntry> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |why: &str| Error::format("manifest", format!("line {}: {why}", n + 1));
        let mut cols = line.split('\t');
        let (Some(name), Some(dims), Some(role), None) =
            (cols.next(), cols.next(), cols.next(), cols.next())
        else {
            return Err(bad("expected three tab-separated columns"));
        };
        if !valid_name(name) {
            return Err(bad("invalid tensor name"));
        }
        if out.iter().any(|e| e.name == name) {
            return Err(bad("duplicate tensor name"));
        }
        let shape = if dims.is_empty() {
            Vec::new()
        } else {
            dims.split('x')
                .map(|d| d.parse::<usize>().map_err(|_| bad("invalid extent")))
                .collect::<Result<Vec<_>>>()?
        };
        if shape.len() > ctsr::MAX_RANK {
            return Err(bad("rank too large"));
        }
        out.push(ManifestEntry {
            name: name.to_string(),
            shape,
            role: role.parse().map_err(|_| bad("unknown role"))?,
        });
    }
    Ok(out)
}

/// Ordered collection of named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: IndexMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor, role: Role) -> Result<()> {
        if !valid_name(name) {
            return Err(Error::invalid(format!("invalid parameter name {name:?}")));
        }
        if self.params.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter {name}")));
        }
        self.params.insert(name.to_string(), Param { value, role });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::invalid(format!("no parameter named {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::invalid(format!("no parameter named {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn total_values(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    pub fn manifest(&self) -> Vec<ManifestEntry> {
        self.params
            .iter()
            .map(|(name, p)| ManifestEntry {
                name: name.clone(),
                shape: p.value.shape().to_vec(),
                role: p.role,
            })
            .collect()
    }

    /// Error unless both stores hold the same names, shapes and roles in order.
    pub fn check_same_manifest(&self, other: &ParamStore) -> Result<()> {
        let (a, b) = (self.manifest(), other.manifest());
        if a.len() != b.len() {
            return Err(Error::Manifest(format!(
                "{} vs {} parameters",
                a.len(),
                b.len()
            )));
        }
        for (x, y) in a.iter().zip(&b) {
            if x != y {
                return Err(Error::Manifest(format!(
                    "{} {:?} {} vs {} {:?} {}",
                    x.name, x.shape, x.role, y.name, y.shape, y.role
                )));
            }
        }
        Ok(())
    }

    /// Enter every parameter into `g`, tracked or as constants.
    pub fn bind(&self, g: &mut Graph, track: bool) -> Bindings {
        let vars = self
            .params
            .iter()
            .map(|(name, p)| {
                let v = if track {
                    g.param(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                };
                (name.clone(), v)
            })
            .collect();
        Bindings { vars }
    }

    /// Round every value to the stored precision.
    pub fn quantize(&mut self) {
        for p in self.params.values_mut() {
            p.value = ctsr::quantize(&p.value);
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, p) in &self.params {
            ctsr::write(&dir.join(format!("{name}.ctsr")), &p.value)?;
        }
        crate::io::write_bytes(
            &dir.join(MANIFEST_FILE),
            render_manifest(&self.manifest()).as_bytes(),
        )
    }

    pub fn load(dir: &Path) -> Result<ParamStore> {
        let entries = parse_manifest(&crate::io::read_text(&dir.join(MANIFEST_FILE))?)?;
        let mut store = ParamStore::new();
        for e in entries {
            let t = ctsr::read(&dir.join(format!("{}.ctsr", e.name)))?;
            if t.shape() != e.shape.as_slice() {
                return Err(Error::Manifest(format!(
                    "{}: manifest shape {:?}, file shape {:?}",
                    e.name,
                    e.shape,
                    t.shape()
                )));
            }
            store.insert(&e.name, t, e.role)?;
        }
        Ok(store)
    }
}

/// Graph handles for one binding of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bindings {
    vars: IndexMap<String, Var>,
}

impl Bindings {
    /// Pair names with handles already entered in a graph.
    pub fn from_vars<'a>(names: impl IntoIterator<Item = &'a str>, vars: &[Var]) -> Result<Self> {
        let names: Vec<&str> = names.into_iter().collect();
        if names.len() != vars.len() {
            return Err(Error::invalid(format!(
                "{} names for {} variables",
                names.len(),
                vars.len()
            )));
        }
        Ok(Bindings {
            vars: names
                .into_iter()
                .map(String::from)
                .zip(vars.iter().copied())
                .collect(),
        })
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("parameter {name} is not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}
