//! Frozen model versions and their binary file format.
//!
//! Layout (little-endian): `b"RCL1"`, then u32 `version`, `scenario`
//! (0 = DIL, 1 = CIL), `experience_id`, `seed`, `input_dim`, `hidden_dim`,
//! `output_dim`, `seen_class_count`, the seen class ids as u32, then
//! `w1`, `b1`, `w2`, `b2` as row-major f64.

use std::fs;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data::SparseSample;
use crate::error::{Error, Result};
use crate::nn::{self, ClassMask, Matrix, MlpModel};
use crate::scenarios::ScenarioKind;

const MAGIC: &[u8; 4] = b"RCL1";
const VERSION: u32 = 1;

/// Immutable copy of a model after some experience, with the classes it may
/// predict.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSnapshot {
    model: MlpModel,
    experience_id: u32,
    seed: u32,
    scenario: ScenarioKind,
    seen_classes: Vec<usize>,
    mask: ClassMask,
}

impl ModelSnapshot {
    pub fn new(
        model: &MlpModel,
        experience_id: u32,
        seed: u32,
        scenario: ScenarioKind,
        seen_classes: Vec<usize>,
    ) -> Result<Self> {
        let mut seen_classes = seen_classes;
        seen_classes.sort_unstable();
        seen_classes.dedup();
        let mask = ClassMask::from_classes(model.output_dim(), seen_classes.iter().copied())?;
        Ok(ModelSnapshot { model: model.clone(), experience_id, seed, scenario, seen_classes, mask })
    }

    pub fn model(&self) -> &MlpModel {
        &self.model
    }
    pub fn experience_id(&self) -> u32 {
        self.experience_id
    }
    pub fn seed(&self) -> u32 {
        self.seed
    }
    pub fn scenario(&self) -> ScenarioKind {
        self.scenario
    }
    pub fn seen_classes(&self) -> &[usize] {
        &self.seen_classes
    }
    pub fn mask(&self) -> &ClassMask {
        &self.mask
    }

    pub fn forward_logits(&self, samples: &[&SparseSample]) -> Result<Matrix> {
        self.model.forward_logits(samples, &self.mask)
    }

    /// Predictions restricted to the snapshot's seen classes.
    pub fn predict(&self, samples: &[&SparseSample]) -> Result<Vec<usize>> {
        nn::predict(&self.model, samples, &self.mask)
    }

    pub fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        let header = [
            VERSION,
            self.scenario.code(),
            self.experience_id,
            self.seed,
            self.model.input_dim() as u32,
            self.model.hidden_dim() as u32,
            self.model.output_dim() as u32,
            self.seen_classes.len() as u32,
        ];
        for v in header {
            w.write_all(&v.to_le_bytes())?;
        }
        for &c in &self.seen_classes {
            w.write_all(&(c as u32).to_le_bytes())?;
        }
        for p in self.model.flatten() {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let fmt = |e: io::Error| match e.kind() {
            io::ErrorKind::UnexpectedEof => Error::Format("truncated snapshot".into()),
            _ => Error::Io(e),
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(fmt)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let mut u32s = |n: usize| -> Result<Vec<u32>> {
            let mut buf = vec![0u8; 4 * n];
            r.read_exact(&mut buf).map_err(fmt)?;
            Ok(buf.chunks_exact(4).map(|b| u32::from_le_bytes(b.try_into().unwrap())).collect())
        };
        let h = u32s(8)?;
        if h[0] != VERSION {
            return Err(Error::Format(format!("unsupported version {}", h[0])));
        }
        let scenario =
            ScenarioKind::from_code(h[1]).ok_or_else(|| Error::Format(format!("unknown scenario code {}", h[1])))?;
        let (input_dim, hidden_dim, output_dim) = (h[4] as usize, h[5] as usize, h[6] as usize);
        let seen: Vec<usize> = u32s(h[7] as usize)?.into_iter().map(|c| c as usize).collect();
        let n = nn::param_count(input_dim, hidden_dim, output_dim);
        let mut buf = vec![0u8; 8 * n];
        r.read_exact(&mut buf).map_err(fmt)?;
        let params = buf.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", rest.len())));
        }
        let model = MlpModel::from_flat(input_dim, hidden_dim, output_dim, params)?;
        ModelSnapshot::new(&model, h[2], h[3], scenario, seen)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path.as_ref())?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::Format(format!("cannot open {}: {e}", path.display())))?;
        Self::read(BufReader::new(file))
    }
}
