//! Whitespace-separated text formats for cameras, poses and body templates.
//! `#` starts a comment that runs to the end of the line.

use std::fmt::Write as _;
use std::path::Path;

use super::atomic_write;
use crate::error::{Error, Result};
use crate::geometry::{Pose, Skeleton, SkinningWeights};
use crate::math::{Mat4, Vec3};
use crate::splatting::Camera;
use crate::templates::BodyTemplate;

/// Token reader with line-aware error messages.
struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
    what: &'a str,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str, what: &'a str) -> Self {
        let items = text
            .lines()
            .enumerate()
            .flat_map(|(i, l)| l.split('#').next().unwrap_or("").split_whitespace().map(move |t| (i + 1, t)))
            .collect();
        Self { items, pos: 0, what }
    }

    fn err(&self, msg: impl std::fmt::Display) -> Error {
        let line = self.items.get(self.pos.min(self.items.len().saturating_sub(1))).map_or(0, |t| t.0);
        Error::invalid(format!("{} line {line}: {msg}", self.what))
    }

    fn done(&self) -> bool {
        self.pos >= self.items.len()
    }

    fn next(&mut self) -> Result<&'a str> {
        let t = self.items.get(self.pos).map(|t| t.1).ok_or_else(|| self.err("unexpected end of file"))?;
        self.pos += 1;
        Ok(t)
    }

    fn keyword(&mut self, k: &str) -> Result<()> {
        let t = self.next()?;
        if t != k {
            self.pos -= 1;
            return Err(self.err(format!("expected '{k}', found '{t}'")));
        }
        Ok(())
    }

    fn f64(&mut self) -> Result<f64> {
        let t = self.next()?;
        t.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
            self.pos -= 1;
            self.err(format!("'{t}' is not a finite number"))
        })
    }

    fn usize(&mut self) -> Result<usize> {
        let t = self.next()?;
        t.parse::<usize>().map_err(|_| {
            self.pos -= 1;
            self.err(format!("'{t}' is not a count"))
        })
    }

    fn vec3(&mut self) -> Result<Vec3> {
        Ok(Vec3::new(self.f64()?, self.f64()?, self.f64()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

fn num(out: &mut String, v: f64) {
    // `{:?}` prints the shortest representation that round-trips exactly.
    let _ = write!(out, " {v:?}");
}

/// A camera with its role in a scene bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraRecord {
    pub camera: Camera,
    /// Held out from training.
    pub held_out: bool,
}

/// One camera per line:
/// `split fx fy cx cy width height near r00 r01 r02 t0 r10 r11 r12 t1 r20 r21 r22 t2`
/// where `split` is `train` or `test` and the last twelve numbers are the
/// top three rows of the world-to-camera matrix.
pub fn format_cameras(cams: &[CameraRecord]) -> String {
    let mut s = String::from("# split fx fy cx cy width height near | world-to-camera rows 0..3 (12 values)\n");
    for r in cams {
        let c = &r.camera;
        s.push_str(if r.held_out { "test" } else { "train" });
        for v in [c.fx, c.fy, c.cx, c.cy] {
            num(&mut s, v);
        }
        let _ = write!(s, " {} {}", c.width, c.height);
        num(&mut s, c.near);
        for row in 0..3 {
            for col in 0..4 {
                num(&mut s, c.world_to_cam[(row, col)]);
            }
        }
        s.push('\n');
    }
    s
}

pub fn parse_cameras(text: &str) -> Result<Vec<CameraRecord>> {
    let mut t = Tokens::new(text, "cameras");
    let mut out = Vec::new();
    while !t.done() {
        let held_out = match t.next()? {
            "train" => false,
            "test" => true,
            other => {
                t.pos -= 1;
                return Err(t.err(format!("split must be 'train' or 'test', found '{other}'")));
            }
        };
        let intr = [t.f64()?, t.f64()?, t.f64()?, t.f64()?];
        let (w, h) = (t.usize()?, t.usize()?);
        let near = t.f64()?;
        let mut m = Mat4::identity();
        for row in 0..3 {
            for col in 0..4 {
                m[(row, col)] = t.f64()?;
            }
        }
        let camera = Camera::new(m, intr, w, h, near).map_err(|e| t.err(e))?;
        out.push(CameraRecord { camera, held_out });
    }
    Ok(out)
}

/// One pose per line: joint count, root translation, then `joints + 1` axis-angle
/// rotations (global orientation first).
pub fn format_poses(poses: &[Pose]) -> String {
    let mut s = String::from("# joints tx ty tz | (joints + 1) axis-angle rotations, global orientation first\n");
    for p in poses {
        let _ = write!(s, "{}", p.rotations.len() - 1);
        for v in p.root_translation.iter().chain(p.rotations.iter().flat_map(|r| r.iter())) {
            num(&mut s, *v);
        }
        s.push('\n');
    }
    s
}

pub fn parse_poses(text: &str) -> Result<Vec<Pose>> {
    let mut t = Tokens::new(text, "poses");
    let mut out = Vec::new();
    while !t.done() {
        let joints = t.usize()?;
        let root_translation = t.vec3()?;
        let rotations = (0..=joints).map(|_| t.vec3()).collect::<Result<_>>()?;
        out.push(Pose { root_translation, rotations });
    }
    Ok(out)
}

fn write_skeleton(s: &mut String, sk: &Skeleton) {
    let _ = writeln!(s, "joints {}", sk.joint_count());
    for j in 0..sk.joint_count() {
        let _ = write!(s, "{}", sk.parents[j].map_or(-1, |p| p as i64));
        let m = &sk.rest_local[j];
        for row in 0..3 {
            for col in 0..4 {
                num(s, m[(row, col)]);
            }
        }
        s.push('\n');
    }
}

fn read_skeleton(t: &mut Tokens) -> Result<Skeleton> {
    t.keyword("joints")?;
    let j = t.usize()?;
    let mut parents = Vec::with_capacity(j);
    let mut rest = Vec::with_capacity(j);
    for _ in 0..j {
        let tok = t.next()?;
        let p: i64 = tok.parse().map_err(|_| t.err(format!("'{tok}' is not a parent index")))?;
        parents.push(if p < 0 { None } else { Some(p as usize) });
        let mut m = Mat4::identity();
        for row in 0..3 {
            for col in 0..4 {
                m[(row, col)] = t.f64()?;
            }
        }
        rest.push(m);
    }
    Skeleton::new(parents, rest).map_err(|e| t.err(e))
}

pub fn format_skeleton(sk: &Skeleton) -> String {
    let mut s = String::from("# parent (-1 for roots) | rest transform relative to parent, rows 0..3\n");
    write_skeleton(&mut s, sk);
    s
}

pub fn parse_skeleton(text: &str) -> Result<Skeleton> {
    let mut t = Tokens::new(text, "skeleton");
    let sk = read_skeleton(&mut t)?;
    if !t.done() {
        return Err(t.err("trailing data"));
    }
    Ok(sk)
}

fn write_rows(s: &mut String, name: &str, rows: usize, data: &[f64]) {
    let width = if rows == 0 { 0 } else { data.len() / rows };
    let _ = writeln!(s, "{name} {rows} {width}");
    for r in 0..rows {
        for v in &data[r * width..(r + 1) * width] {
            num(s, *v);
        }
        s.push('\n');
    }
}

fn read_rows(t: &mut Tokens, name: &str) -> Result<(usize, usize, Vec<f64>)> {
    t.keyword(name)?;
    let rows = t.usize()?;
    let width = t.usize()?;
    Ok((rows, width, t.f64s(rows * width)?))
}

/// Sectioned body template. Each numeric section starts with
/// `name rows columns` followed by the row-major values.
pub fn format_template(b: &BodyTemplate) -> String {
    let mut s = String::from("layersplat-template 1\n");
    let flat = |v: &[Vec3]| -> Vec<f64> { v.iter().flat_map(|p| [p.x, p.y, p.z]).collect() };
    write_rows(&mut s, "vertices", b.vertex_count(), &flat(&b.rest_vertices));
    let faces: Vec<f64> = b.faces.iter().flat_map(|f| f.map(|i| i as f64)).collect();
    write_rows(&mut s, "faces", b.faces.len(), &faces);
    write_rows(&mut s, "shape_basis", if b.shape_dims == 0 { 0 } else { b.vertex_count() }, &b.shape_basis);
    write_rows(&mut s, "pose_basis", if b.pose_basis.is_empty() { 0 } else { b.vertex_count() }, &b.pose_basis);
    write_rows(&mut s, "offsets", b.vertex_count(), &flat(&b.offsets));
    write_skeleton(&mut s, &b.skeleton);
    write_rows(&mut s, "regressor", b.joint_count(), &b.joint_regressor);
    write_rows(&mut s, "weights", b.vertex_count(), &b.weights.base);
    let _ = writeln!(s, "regions {}", b.region_names.len());
    let _ = writeln!(s, "{}", b.region_names.join(" "));
    let labels: Vec<f64> = b.regions.iter().map(|&r| r as f64).collect();
    write_rows(&mut s, "labels", b.vertex_count(), &labels);
    s
}

pub fn parse_template(text: &str) -> Result<BodyTemplate> {
    let mut t = Tokens::new(text, "template");
    t.keyword("layersplat-template")?;
    let version = t.usize()?;
    if version != 1 {
        return Err(t.err(format!("unsupported template version {version}")));
    }
    let vecs = |d: Vec<f64>| -> Vec<Vec3> { d.chunks_exact(3).map(Vec3::from_column_slice).collect() };
    let (v, w3, verts) = read_rows(&mut t, "vertices")?;
    if w3 != 3 {
        return Err(t.err("vertices need 3 columns"));
    }
    let (_, fw, faces) = read_rows(&mut t, "faces")?;
    if !faces.is_empty() && fw != 3 {
        return Err(t.err("faces need 3 columns"));
    }
    let faces = faces
        .chunks_exact(3)
        .map(|f| {
            if f.iter().any(|x| x.fract() != 0.0 || *x < 0.0) {
                Err(Error::invalid("template faces must be non-negative integers"))
            } else {
                Ok([f[0] as usize, f[1] as usize, f[2] as usize])
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let (_, sw, shape_basis) = read_rows(&mut t, "shape_basis")?;
    let (_, _, pose_basis) = read_rows(&mut t, "pose_basis")?;
    let (_, _, offsets) = read_rows(&mut t, "offsets")?;
    let skeleton = read_skeleton(&mut t)?;
    let (_, _, joint_regressor) = read_rows(&mut t, "regressor")?;
    let (_, _, base) = read_rows(&mut t, "weights")?;
    t.keyword("regions")?;
    let nr = t.usize()?;
    let region_names = (0..nr).map(|_| t.next().map(str::to_string)).collect::<Result<Vec<_>>>()?;
    let (_, _, labels) = read_rows(&mut t, "labels")?;
    if !t.done() {
        return Err(t.err("trailing data"));
    }
    let weights = SkinningWeights::new(skeleton.joint_count(), base)?;
    let b = BodyTemplate {
        rest_vertices: vecs(verts),
        faces,
        shape_dims: if shape_basis.is_empty() { 0 } else { sw / 3 },
        shape_basis,
        pose_basis,
        offsets: vecs(offsets),
        joint_regressor,
        weights,
        skeleton,
        region_names,
        regions: labels.iter().map(|&l| l as u16).collect(),
    };
    if b.vertex_count() != v {
        return Err(Error::dim("template vertex count mismatch"));
    }
    b.validate()?;
    Ok(b)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn load_cameras(path: &Path) -> Result<Vec<CameraRecord>> {
    parse_cameras(&read_text(path)?)
}

pub fn save_cameras(path: &Path, cams: &[CameraRecord]) -> Result<()> {
    atomic_write(path, format_cameras(cams).as_bytes())
}

pub fn load_poses(path: &Path) -> Result<Vec<Pose>> {
    parse_poses(&read_text(path)?)
}

pub fn save_poses(path: &Path, poses: &[Pose]) -> Result<()> {
    atomic_write(path, format_poses(poses).as_bytes())
}

pub fn load_template(path: &Path) -> Result<BodyTemplate> {
    parse_template(&read_text(path)?)
}

pub fn save_template(path: &Path, t: &BodyTemplate) -> Result<()> {
    atomic_write(path, format_template(t).as_bytes())
}
