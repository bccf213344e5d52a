//! Text architecture configs and the keyword → layer registry.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::cell::RefCell;
use std::str::FromStr;

use super::{ConvLayer, EquivariantNorm, GatedActivation, Layer, PoolLayer, TapLayer};
use crate::conv::{BackendRegistry, ConvMode};
use crate::error::{Error, Result};
use crate::kernel::BasisSpec;
use crate::repr::FieldType;

/// `key=value` arguments of one config line. Every key must be consumed by
/// the layer builder; leftovers are reported as errors.
#[derive(Debug)]
pub struct LayerArgs {
    line: usize,
    values: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

impl LayerArgs {
    pub fn new(line: usize, values: BTreeMap<String, String>) -> Self {
        LayerArgs {
            line,
            values,
            used: RefCell::new(BTreeSet::new()),
        }
    }

    pub fn line(&self) -> usize {
        self.line
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_string());
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| Error::Parse {
                line: self.line,
                message: format!("bad value for {key}: '{v}'"),
            }),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?.ok_or_else(|| Error::Parse {
            line: self.line,
            message: format!("missing required argument {key}="),
        })
    }

    fn check_all_used(&self) -> Result<()> {
        let used = self.used.borrow();
        match self.values.keys().find(|k| !used.contains(*k)) {
            Some(k) => Err(Error::Parse {
                line: self.line,
                message: format!("unknown argument '{k}'"),
            }),
            None => Ok(()),
        }
    }
}

/// One parsed config line.
#[derive(Debug)]
pub struct LayerSpec {
    pub keyword: String,
    pub args: LayerArgs,
}

/// Parses one layer per line; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<Vec<LayerSpec>> {
    let mut specs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let keyword = tokens.next().expect("non-empty line").to_string();
        let mut values = BTreeMap::new();
        for tok in tokens {
            let (k, v) = tok.split_once('=').ok_or_else(|| Error::Parse {
                line,
                message: format!("expected key=value, got '{tok}'"),
            })?;
            if values.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Parse {
                    line,
                    message: format!("duplicate argument '{k}'"),
                });
            }
        }
        specs.push(LayerSpec {
            keyword,
            args: LayerArgs::new(line, values),
        });
    }
    Ok(specs)
}

/// Shared inputs for building layers.
pub struct BuildContext<'a> {
    pub seed: u64,
    pub backends: &'a BackendRegistry,
}

/// Builds a layer from its arguments and the incoming field type (`None`
/// for a first layer without `in=`).
pub type LayerBuilder = fn(&LayerArgs, Option<&FieldType>, &BuildContext<'_>) -> Result<Box<dyn Layer>>;

#[derive(Clone)]
pub struct LayerRegistry {
    builders: HashMap<String, LayerBuilder>,
    backends: BackendRegistry,
}

impl Default for LayerRegistry {
    /// `conv`, `norm`, `act`, `pool`, `tap`, with the default backends.
    fn default() -> Self {
        let mut reg = LayerRegistry {
            builders: HashMap::new(),
            backends: BackendRegistry::default(),
        };
        reg.register("conv", build_conv);
        reg.register("norm", |args, field, _| Ok(Box::new(EquivariantNorm::new(incoming(args, field)?))));
        reg.register("act", build_act);
        reg.register("pool", |args, field, _| {
            let factor = args.get_or("factor", 2u32)?;
            if factor < 2 {
                return Err(Error::Parse {
                    line: args.line(),
                    message: format!("pool factor must be >= 2, got {factor}"),
                });
            }
            Ok(Box::new(PoolLayer::new(incoming(args, field)?, factor)))
        });
        reg.register("tap", |args, field, _| Ok(Box::new(TapLayer::new(incoming(args, field)?))));
        reg
    }
}

impl LayerRegistry {
    pub fn register(&mut self, keyword: &str, builder: LayerBuilder) {
        self.builders.insert(keyword.to_string(), builder);
    }

    pub fn backends(&self) -> &BackendRegistry {
        &self.backends
    }

    pub fn backends_mut(&mut self) -> &mut BackendRegistry {
        &mut self.backends
    }

    pub fn keywords(&self) -> Vec<&str> {
        let mut k: Vec<&str> = self.builders.keys().map(String::as_str).collect();
        k.sort_unstable();
        k
    }

    /// Builds the layer for `spec`; `seed` seeds its initial weights.
    pub fn build(&self, spec: &LayerSpec, field: Option<&FieldType>, seed: u64) -> Result<Box<dyn Layer>> {
        let builder = self.builders.get(&spec.keyword).ok_or_else(|| Error::Parse {
            line: spec.args.line(),
            message: format!("unknown layer '{}'", spec.keyword),
        })?;
        let ctx = BuildContext {
            seed,
            backends: &self.backends,
        };
        let layer = builder(&spec.args, field, &ctx)?;
        spec.args.check_all_used()?;
        Ok(layer)
    }
}

/// The incoming field: `in=` if given (and consistent), else the chain's.
fn incoming(args: &LayerArgs, field: Option<&FieldType>) -> Result<FieldType> {
    let declared: Option<FieldType> = args.get("in")?;
    match (declared, field) {
        (Some(d), Some(f)) if &d != f => Err(Error::field_mismatch(f, d)),
        (Some(d), _) => Ok(d),
        (None, Some(f)) => Ok(f.clone()),
        (None, None) => Err(Error::Parse {
            line: args.line(),
            message: "first layer needs in=<field type>".into(),
        }),
    }
}

fn build_conv(args: &LayerArgs, field: Option<&FieldType>, ctx: &BuildContext<'_>) -> Result<Box<dyn Layer>> {
    let field_in = incoming(args, field)?;
    let field_out: FieldType = args.require("out")?;
    let mut spec = BasisSpec {
        size: args.get_or("size", 3usize)?,
        epsilon: args.get_or("eps", 0.6)?,
        ..Default::default()
    };
    if let Some(m) = args.raw("m") {
        spec.centers = m
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse {
                line: args.line(),
                message: format!("bad radial centers '{m}'"),
            })?;
    }
    let mode: ConvMode = args.get_or("mode", ConvMode::General)?;
    let backend = ctx.backends.get(args.raw("backend").unwrap_or("sparse"))?;
    Ok(Box::new(ConvLayer::build(field_in, field_out, spec, mode, ctx.seed)?.with_backend(backend)))
}

fn build_act(args: &LayerArgs, field: Option<&FieldType>, ctx: &BuildContext<'_>) -> Result<Box<dyn Layer>> {
    let field = incoming(args, field)?;
    let size = args.get_or("size", 3usize)?;
    Ok(Box::new(GatedActivation::new(field, size, ctx.seed)?))
}
