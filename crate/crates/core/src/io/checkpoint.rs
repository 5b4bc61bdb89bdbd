use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::atomic_write;
use crate::error::{Error, Result};
use crate::gaussians::{sh_coeff_count, GaussianSet};
use crate::geometry::{Skeleton, SkinningWeights};
use crate::math::Mat4;
use crate::model::{Entity, Model};

pub const MAGIC: &[u8; 8] = b"LSPLATCK";
pub const VERSION: u32 = 1;

/// A model and the iteration it was saved at.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub iteration: u64,
}

/// FNV-1a, 64-bit.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    ck.model.validate()?;
    let mut b: Vec<u8> = Vec::new();
    b.extend_from_slice(MAGIC);
    b.write_u32::<LittleEndian>(VERSION)?;
    b.write_u64::<LittleEndian>(ck.iteration)?;
    let sk = &ck.model.skeleton;
    b.write_u32::<LittleEndian>(sk.joint_count() as u32)?;
    for j in 0..sk.joint_count() {
        b.write_i32::<LittleEndian>(sk.parents[j].map_or(-1, |p| p as i32))?;
        let m = &sk.rest_local[j];
        for r in 0..4 {
            for c in 0..4 {
                b.write_f64::<LittleEndian>(m[(r, c)])?;
            }
        }
    }
    b.write_u32::<LittleEndian>(ck.model.entities.len() as u32)?;
    for e in &ck.model.entities {
        let name = e.set.entity.as_bytes();
        b.write_u32::<LittleEndian>(name.len() as u32)?;
        b.extend_from_slice(name);
        b.write_u32::<LittleEndian>(e.set.sh_degree as u32)?;
        b.write_u64::<LittleEndian>(e.set.len() as u64)?;
        for arr in [&e.set.means, &e.set.quats, &e.set.log_scales, &e.set.opacity_logits, &e.set.sh, &e.weights.base, &e.weights.delta] {
            for v in arr.iter() {
                b.write_f64::<LittleEndian>(*v)?;
            }
        }
    }
    let sum = fnv1a(&b);
    b.write_u64::<LittleEndian>(sum)?;
    Ok(b)
}

fn truncated(_: std::io::Error) -> Error {
    Error::Checkpoint("file is truncated".into())
}

fn read_f64s(r: &mut Cursor<&[u8]>, n: usize) -> Result<Vec<f64>> {
    let remaining = r.get_ref().len() as u64 - r.position();
    if (n as u64).saturating_mul(8) > remaining {
        return Err(Error::Checkpoint("file is truncated".into()));
    }
    let mut out = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut out).map_err(truncated)?;
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 4 {
        return Err(Error::Checkpoint("file is truncated".into()));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a layersplat checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Version { found: version, expected: VERSION });
    }
    if bytes.len() < 20 {
        return Err(Error::Checkpoint("file is truncated".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let mut r = Cursor::new(body);
    r.set_position(12);
    let iteration = r.read_u64::<LittleEndian>().map_err(truncated)?;
    let joints = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let mut parents = Vec::with_capacity(joints.min(1 << 16));
    let mut rest_local = Vec::with_capacity(joints.min(1 << 16));
    for _ in 0..joints {
        let p = r.read_i32::<LittleEndian>().map_err(truncated)?;
        parents.push(if p < 0 { None } else { Some(p as usize) });
        let v = read_f64s(&mut r, 16)?;
        rest_local.push(Mat4::from_row_slice(&v));
    }
    let count = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let mut entities = Vec::new();
    for _ in 0..count {
        let len = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        if len as u64 > body.len() as u64 - r.position() {
            return Err(Error::Checkpoint("file is truncated".into()));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("entity name is not UTF-8".into()))?;
        let sh_degree = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        if sh_degree > crate::gaussians::sh::MAX_DEGREE {
            return Err(Error::Checkpoint(format!("entity '{name}' has SH degree {sh_degree}")));
        }
        let n = r.read_u64::<LittleEndian>().map_err(truncated)? as usize;
        let k = 3 * sh_coeff_count(sh_degree);
        let mut set = GaussianSet::empty(name, sh_degree);
        set.means = read_f64s(&mut r, 3 * n)?;
        set.quats = read_f64s(&mut r, 4 * n)?;
        set.log_scales = read_f64s(&mut r, 3 * n)?;
        set.opacity_logits = read_f64s(&mut r, n)?;
        set.sh = read_f64s(&mut r, k * n)?;
        let base = read_f64s(&mut r, joints * n)?;
        let delta = read_f64s(&mut r, joints * n)?;
        entities.push(Entity { set, weights: SkinningWeights { joints, base, delta } });
    }
    if r.position() != body.len() as u64 {
        return Err(Error::Checkpoint("trailing bytes before checksum".into()));
    }
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    if stored != fnv1a(body) {
        return Err(Error::Checkpoint("checksum mismatch (file corrupt or truncated)".into()));
    }
    let skeleton = Skeleton::new(parents, rest_local).map_err(|e| Error::Checkpoint(format!("skeleton: {e}")))?;
    let model = Model { skeleton, entities };
    model.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(Checkpoint { model, iteration })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    atomic_write(path, &encode(ck)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    decode(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}
