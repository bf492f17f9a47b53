//! Net parameter files (`.cep`).
//!
//! Header keys: `version`, `net`, `variant`, `layers`, `rows`, `cols`,
//! `p_min`, `p_max`, `groups`, followed by free-form metadata. Blocks: per
//! layer `W` then `theta`; the fine net appends `omega`.

use std::path::Path;

use crate::config::KvMap;
use crate::container::{ContainerReader, ContainerWriter};
use crate::error::{Error, Result};
use crate::gradcheck::NetKind;
use crate::nets::{CoarseNetParams, FineNetParams, Layer, NetVariant};
use crate::shrinkage::SupportSchedule;

pub const CHECKPOINT_MAGIC: &str = "CEP1";
pub const CHECKPOINT_VERSION: u32 = 1;

const RESERVED: [&str; 9] = ["version", "net", "variant", "layers", "rows", "cols", "p_min", "p_max", "groups"];

#[derive(Debug, Clone, PartialEq)]
pub enum NetParams {
    Coarse(CoarseNetParams),
    Fine(FineNetParams),
}

impl NetParams {
    pub fn kind(&self) -> NetKind {
        match self {
            NetParams::Coarse(_) => NetKind::Coarse,
            NetParams::Fine(_) => NetKind::Fine,
        }
    }

    fn parts(&self) -> (&[Layer], &SupportSchedule, Option<f64>) {
        match self {
            NetParams::Coarse(p) => (&p.layers, &p.schedule, None),
            NetParams::Fine(p) => (&p.layers, &p.schedule, Some(p.omega)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub variant: NetVariant,
    pub params: NetParams,
    /// Free-form metadata; reserved header keys are dropped on write.
    pub meta: KvMap,
}

impl Checkpoint {
    pub fn new(variant: NetVariant, params: NetParams, meta: KvMap) -> Self {
        Self { variant, params, meta }
    }

    pub fn kind(&self) -> NetKind {
        self.params.kind()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (layers, schedule, omega) = self.params.parts();
        let (rows, cols) = layers[0].w.dim();
        let mut header = KvMap::new();
        header.set("version", CHECKPOINT_VERSION);
        header.set("net", self.kind());
        header.set("variant", self.variant.tag());
        header.set("layers", layers.len());
        header.set("rows", rows);
        header.set("cols", cols);
        header.set("p_min", schedule.p_min());
        header.set("p_max", schedule.p_max());
        header.set("groups", schedule.groups());
        for (k, v) in self.meta.iter() {
            if !RESERVED.contains(&k) {
                header.set(k, v);
            }
        }
        let mut w = ContainerWriter::new(CHECKPOINT_MAGIC, &header);
        for l in layers {
            w.block(&l.w);
            w.scalar(l.theta);
        }
        if let Some(omega) = omega {
            w.scalar(omega);
        }
        w.into_bytes()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(path, bytes)
    }

    pub fn from_bytes(path: &Path, bytes: Vec<u8>) -> Result<Self> {
        let mut r = ContainerReader::from_bytes(path, bytes, CHECKPOINT_MAGIC)?;
        let h = r.header().clone();
        let version: u32 = h.require("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(r.format_error(format!("unsupported checkpoint version {version}")));
        }
        let kind: NetKind = h.require::<String>("net")?.parse()?;
        let variant: NetVariant = h.require::<String>("variant")?.parse()?;
        let layers: usize = h.require("layers")?;
        let rows: usize = h.require("rows")?;
        let cols: usize = h.require("cols")?;
        if layers == 0 {
            return Err(r.format_error("checkpoint has no layers"));
        }
        let schedule = SupportSchedule::new(h.require("p_min")?, h.require("p_max")?, layers, h.require("groups")?)?;
        let mut ls = Vec::with_capacity(layers);
        for l in 0..layers {
            let w = r.block_shaped(rows, cols, &format!("W of layer {}", l + 1))?;
            let theta = r.scalar(&format!("theta of layer {}", l + 1))?;
            ls.push(Layer { w, theta });
        }
        let params = match kind {
            NetKind::Coarse => NetParams::Coarse(CoarseNetParams::new(ls, schedule)?),
            NetKind::Fine => {
                let omega = r.scalar("omega")?;
                NetParams::Fine(FineNetParams::new(ls, omega, schedule)?)
            }
        };
        r.finish()?;
        let mut meta = KvMap::new();
        for (k, v) in h.iter() {
            if !RESERVED.contains(&k) {
                meta.set(k, v);
            }
        }
        Ok(Self { variant, params, meta })
    }

    pub fn into_coarse(self) -> Result<CoarseNetParams> {
        match self.params {
            NetParams::Coarse(p) => Ok(p),
            NetParams::Fine(_) => Err(Error::InvalidParameter("expected a coarse-net checkpoint".into())),
        }
    }

    pub fn into_fine(self) -> Result<FineNetParams> {
        match self.params {
            NetParams::Fine(p) => Ok(p),
            NetParams::Coarse(_) => Err(Error::InvalidParameter("expected a fine-net checkpoint".into())),
        }
    }
}
