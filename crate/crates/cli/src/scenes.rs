//! Scene container: a short text header followed by length-prefixed binary
//! records, one per scene.
//!
//! ```text
//! PPBA-SCENES 1
//! schema <field layout, see SCHEMA>
//! meta <one line of JSON describing how the file was produced>
//! end
//! [u64 payload length][payload] ...
//! ```
//!
//! All integers and floats are little-endian. A payload is the scene id
//! (u32 byte length, UTF-8 bytes), the points (u64 count, then x, y, z,
//! intensity as f64 each) and the boxes (u32 count, then center x/y/z,
//! length, width, height, heading as f64 and the class index as u8).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ppba_core::geom::{Box3D, ClassLabel, Point, PointScene};

pub const MAGIC: &str = "PPBA-SCENES";
pub const VERSION: u32 = 1;
pub const SCHEMA: &str = "id:utf8/u32 points:u64*(x,y,z,intensity:f64) \
boxes:u32*(center_x,center_y,center_z,length,width,height,heading:f64,class:u8) le";

const POINT_BYTES: usize = 32;
const BOX_BYTES: usize = 57;

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad header: {0}")]
    Header(String),
    #[error("scene record {index}: {message}")]
    Record { index: usize, message: String },
}

pub struct SceneWriter<W: Write> {
    out: W,
    written: usize,
}

impl SceneWriter<BufWriter<File>> {
    pub fn create(path: &Path, meta: &serde_json::Value) -> Result<Self, SceneError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        SceneWriter::new(BufWriter::new(File::create(path)?), meta)
    }
}

impl<W: Write> SceneWriter<W> {
    pub fn new(mut out: W, meta: &serde_json::Value) -> Result<Self, SceneError> {
        writeln!(out, "{MAGIC} {VERSION}")?;
        writeln!(out, "schema {SCHEMA}")?;
        writeln!(out, "meta {}", serde_json::to_string(meta).expect("json value serializes"))?;
        writeln!(out, "end")?;
        Ok(SceneWriter { out, written: 0 })
    }

    pub fn write(&mut self, scene: &PointScene) -> Result<(), SceneError> {
        let id = scene.scene_id.as_bytes();
        let len = 4 + id.len() + 8 + POINT_BYTES * scene.points.len() + 4 + BOX_BYTES * scene.boxes.len();
        let mut buf = Vec::with_capacity(8 + len);
        buf.extend_from_slice(&(len as u64).to_le_bytes());
        buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
        buf.extend_from_slice(id);
        buf.extend_from_slice(&(scene.points.len() as u64).to_le_bytes());
        for p in &scene.points {
            for v in [p.x, p.y, p.z, p.intensity] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf.extend_from_slice(&(scene.boxes.len() as u32).to_le_bytes());
        for b in &scene.boxes {
            for v in [b.center_x, b.center_y, b.center_z, b.length, b.width, b.height, b.heading] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            buf.push(b.class_label.index() as u8);
        }
        self.out.write_all(&buf)?;
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> usize {
        self.written
    }

    pub fn finish(mut self) -> Result<W, SceneError> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub struct SceneReader<R: BufRead> {
    input: R,
    meta: serde_json::Value,
    index: usize,
}

impl SceneReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self, SceneError> {
        let file = File::open(path).map_err(|e| SceneError::Header(format!("{}: {e}", path.display())))?;
        SceneReader::new(BufReader::new(file))
    }
}

impl<R: BufRead> SceneReader<R> {
    pub fn new(mut input: R) -> Result<Self, SceneError> {
        let mut line = String::new();
        let mut next_line = |input: &mut R| -> Result<String, SceneError> {
            line.clear();
            if input.read_line(&mut line)? == 0 {
                return Err(SceneError::Header("truncated header".into()));
            }
            Ok(line.trim_end_matches('\n').to_string())
        };
        let first = next_line(&mut input)?;
        match first.split_once(' ') {
            Some((MAGIC, v)) if v == VERSION.to_string() => {}
            Some((MAGIC, v)) => return Err(SceneError::Header(format!("unsupported version {v}"))),
            _ => return Err(SceneError::Header(format!("not a scene container (first line `{first}`)"))),
        }
        let schema = next_line(&mut input)?;
        if schema.strip_prefix("schema ") != Some(SCHEMA) {
            return Err(SceneError::Header(format!("unexpected schema line `{schema}`")));
        }
        let meta_line = next_line(&mut input)?;
        let meta = meta_line
            .strip_prefix("meta ")
            .ok_or_else(|| SceneError::Header("missing meta line".into()))
            .and_then(|m| serde_json::from_str(m).map_err(|e| SceneError::Header(format!("meta: {e}"))))?;
        if next_line(&mut input)? != "end" {
            return Err(SceneError::Header("missing `end` line".into()));
        }
        Ok(SceneReader { input, meta, index: 0 })
    }

    pub fn meta(&self) -> &serde_json::Value {
        &self.meta
    }

    fn read_one(&mut self) -> Result<Option<PointScene>, SceneError> {
        let mut len = [0u8; 8];
        match self.input.read(&mut len[..1])? {
            0 => return Ok(None),
            _ => self.input.read_exact(&mut len[1..])?,
        }
        let len = u64::from_le_bytes(len);
        let mut payload = Vec::new();
        (&mut self.input).take(len).read_to_end(&mut payload)?;
        if payload.len() as u64 != len {
            return Err(SceneError::Record {
                index: self.index,
                message: format!("truncated: expected {len} bytes, found {}", payload.len()),
            });
        }
        decode(&payload)
            .map(Some)
            .map_err(|message| SceneError::Record {
                index: self.index,
                message,
            })
    }
}

impl<R: BufRead> Iterator for SceneReader<R> {
    type Item = Result<PointScene, SceneError>;

    fn next(&mut self) -> Option<Self::Item> {
        let out = self.read_one().transpose();
        if out.is_some() {
            self.index += 1;
        }
        out
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or("payload too short")?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn decode(payload: &[u8]) -> Result<PointScene, String> {
    let mut c = Cursor { buf: payload, at: 0 };
    let id_len = c.u32()? as usize;
    let id = std::str::from_utf8(c.take(id_len)?)
        .map_err(|e| format!("scene id: {e}"))?
        .to_string();
    let n_points = c.u64()? as usize;
    if n_points.saturating_mul(POINT_BYTES) > payload.len() {
        return Err(format!("point count {n_points} exceeds the payload"));
    }
    let mut points = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let (x, y, z, i) = (c.f64()?, c.f64()?, c.f64()?, c.f64()?);
        points.push(Point::new(x, y, z).with_intensity(i));
    }
    let n_boxes = c.u32()? as usize;
    let mut boxes = Vec::with_capacity(n_boxes.min(payload.len() / BOX_BYTES));
    for k in 0..n_boxes {
        let v: Vec<f64> = (0..7).map(|_| c.f64()).collect::<Result<_, _>>()?;
        let class = c.u8()?;
        let class_label = ClassLabel::from_index(class as usize).ok_or_else(|| format!("box {k}: unknown class {class}"))?;
        let mut b = Box3D::new([v[0], v[1], v[2]], [v[3], v[4], v[5]], v[6], class_label)
            .map_err(|e| format!("box {k}: {e}"))?;
        b.heading = v[6];
        boxes.push(b);
    }
    if c.at != payload.len() {
        return Err(format!("{} trailing bytes", payload.len() - c.at));
    }
    Ok(PointScene::new(id, points, boxes))
}

/// Reads a whole container.
pub fn read_scenes(path: &Path) -> Result<(Vec<PointScene>, serde_json::Value), SceneError> {
    let reader = SceneReader::open(path)?;
    let meta = reader.meta().clone();
    let scenes = reader.collect::<Result<Vec<_>, _>>()?;
    Ok((scenes, meta))
}

/// Writes a whole container.
pub fn write_scenes(path: &Path, scenes: &[PointScene], meta: &serde_json::Value) -> Result<(), SceneError> {
    let mut w = SceneWriter::create(path, meta)?;
    for s in scenes {
        w.write(s)?;
    }
    w.finish()?;
    Ok(())
}
