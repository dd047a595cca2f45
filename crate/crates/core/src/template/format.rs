//! `.btpl` template container.
//!
//! Header JSON: `{"V","F","n_b","S","joint_names","buffers":[{name,offset,len,dtype}]}`
//! where `offset` is relative to the data section and `len` is in bytes.

use super::{BodyTemplate, Region, SkinRow, TemplateError};
use crate::container::{self, ContainerError};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MAGIC: &[u8; 6] = b"BTPL1\n";
const ROOT_PARENT: u32 = u32::MAX;

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(rename = "V")]
    v: usize,
    #[serde(rename = "F")]
    f: usize,
    n_b: usize,
    #[serde(rename = "S")]
    s: usize,
    #[serde(default)]
    joint_names: Vec<String>,
    buffers: Vec<BufferEntry>,
}

#[derive(Serialize, Deserialize)]
struct BufferEntry {
    name: String,
    offset: usize,
    len: usize,
    dtype: String,
}

#[derive(Clone, Copy, PartialEq)]
enum Dtype {
    F32,
    U32,
    U8,
}

impl Dtype {
    fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::U32 => "u32",
            Dtype::U8 => "u8",
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F32 | Dtype::U32 => 4,
            Dtype::U8 => 1,
        }
    }
}

/// Buffer names, dtypes and element counts derived from the header counts.
fn buffer_specs(v: usize, f: usize, n_b: usize, s: usize) -> [(&'static str, Dtype, usize); 9] {
    [
        ("vertices", Dtype::F32, v * 3),
        ("triangles", Dtype::U32, f * 3),
        ("uv_corners", Dtype::F32, f * 6),
        ("parents", Dtype::U32, n_b),
        ("rest_joints", Dtype::F32, n_b * 3),
        ("skin_joint_idx", Dtype::U32, v * 4),
        ("skin_weight_val", Dtype::F32, v * 4),
        ("blendshapes", Dtype::F32, s * v * 3),
        ("region_labels", Dtype::U8, f),
    ]
}

pub fn template_to_bytes(t: &BodyTemplate) -> Vec<u8> {
    let (v, f, n_b, s) = (t.vertex_count(), t.triangle_count(), t.joint_count(), t.shape_count());
    let flat3 = |xs: &[[f32; 3]]| -> Vec<f32> { xs.iter().flatten().copied().collect() };
    let vertices = container::f32_bytes(&flat3(&t.vertices));
    let triangles = container::u32_bytes(&t.triangles.iter().flatten().copied().collect::<Vec<_>>());
    let uvs: Vec<f32> = t.uv_corners.iter().flatten().flatten().copied().collect();
    let uvs = container::f32_bytes(&uvs);
    let parents: Vec<u32> = t
        .parents
        .iter()
        .map(|p| p.map_or(ROOT_PARENT, |p| p as u32))
        .collect();
    let parents = container::u32_bytes(&parents);
    let rest = container::f32_bytes(&flat3(&t.rest_joints));
    let joint_idx: Vec<u32> = t.skin.iter().flat_map(|r| r.joints).collect();
    let joint_idx = container::u32_bytes(&joint_idx);
    let weight_val: Vec<f32> = t.skin.iter().flat_map(|r| r.weights).collect();
    let weight_val = container::f32_bytes(&weight_val);
    let shapes: Vec<f32> = t.shape_blendshapes.iter().flat_map(|s| flat3(s)).collect();
    let shapes = container::f32_bytes(&shapes);
    let regions: Vec<u8> = t.region_labels.iter().map(|&r| r as u8).collect();

    let buffers: [&[u8]; 9] = [
        &vertices, &triangles, &uvs, &parents, &rest, &joint_idx, &weight_val, &shapes, &regions,
    ];
    let offsets = container::buffer_offsets(&buffers.map(|b| b.len()));
    let entries = buffer_specs(v, f, n_b, s)
        .iter()
        .zip(buffers.iter().zip(offsets))
        .map(|(&(name, dtype, _), (buf, offset))| BufferEntry {
            name: name.to_string(),
            offset,
            len: buf.len(),
            dtype: dtype.name().to_string(),
        })
        .collect();
    let header = Header {
        v,
        f,
        n_b,
        s,
        joint_names: t.joint_names.clone(),
        buffers: entries,
    };
    container::encode(MAGIC, &header, &buffers)
}

pub fn save_template(t: &BodyTemplate, path: impl AsRef<Path>) -> Result<(), TemplateError> {
    std::fs::write(path.as_ref(), template_to_bytes(t)).map_err(|source| TemplateError::Io {
        path: path.as_ref().display().to_string(),
        source,
    })
}

pub fn load_template(path: impl AsRef<Path>) -> Result<BodyTemplate, TemplateError> {
    let bytes = std::fs::read(path.as_ref()).map_err(|source| TemplateError::Io {
        path: path.as_ref().display().to_string(),
        source,
    })?;
    template_from_bytes(&bytes)
}

/// Parse and validate a template. Weight rows summing to within 1e-4 of one
/// are renormalized; anything further off is an invariant violation.
pub fn template_from_bytes(bytes: &[u8]) -> Result<BodyTemplate, TemplateError> {
    let decoded = container::decode(MAGIC, bytes).map_err(|e| match e {
        ContainerError::BadMagic { .. } => TemplateError::BadMagic,
        other => TemplateError::CountMismatch(other.to_string()),
    })?;
    let header: Header = serde_json::from_slice(decoded.header)
        .map_err(|e| TemplateError::CountMismatch(format!("malformed header: {e}")))?;
    let (v, f, n_b, s) = (header.v, header.f, header.n_b, header.s);

    let mut raw: Vec<&[u8]> = Vec::with_capacity(9);
    for (name, dtype, count) in buffer_specs(v, f, n_b, s) {
        let entry = header
            .buffers
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| TemplateError::CountMismatch(format!("missing buffer {name:?}")))?;
        if entry.dtype != dtype.name() {
            return Err(TemplateError::CountMismatch(format!(
                "buffer {name:?} has dtype {}, expected {}",
                entry.dtype,
                dtype.name()
            )));
        }
        let expected = count * dtype.size();
        if entry.len != expected {
            return Err(TemplateError::CountMismatch(format!(
                "buffer {name:?} is {} bytes, header counts imply {expected}",
                entry.len
            )));
        }
        let end = entry.offset.checked_add(entry.len).filter(|&e| e <= decoded.data.len());
        let Some(end) = end else {
            return Err(TemplateError::CountMismatch(format!(
                "buffer {name:?} runs past end of file ({} + {} > {})",
                entry.offset,
                entry.len,
                decoded.data.len()
            )));
        };
        raw.push(&decoded.data[entry.offset..end]);
    }

    let to3 = |xs: Vec<f32>| -> Vec<[f32; 3]> { xs.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect() };
    let vertices = to3(container::read_f32s(raw[0]));
    let triangles: Vec<[u32; 3]> = container::read_u32s(raw[1])
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    let uv_corners: Vec<[[f32; 2]; 3]> = container::read_f32s(raw[2])
        .chunks_exact(6)
        .map(|c| [[c[0], c[1]], [c[2], c[3]], [c[4], c[5]]])
        .collect();
    let parents: Vec<Option<usize>> = container::read_u32s(raw[3])
        .into_iter()
        .map(|p| (p != ROOT_PARENT).then_some(p as usize))
        .collect();
    let rest_joints = to3(container::read_f32s(raw[4]));
    let joint_idx = container::read_u32s(raw[5]);
    let weight_val = container::read_f32s(raw[6]);
    let mut skin: Vec<SkinRow> = joint_idx
        .chunks_exact(4)
        .zip(weight_val.chunks_exact(4))
        .map(|(j, w)| SkinRow {
            joints: [j[0], j[1], j[2], j[3]],
            weights: [w[0], w[1], w[2], w[3]],
        })
        .collect();
    for (i, row) in skin.iter_mut().enumerate() {
        let sum = row.sum();
        if (sum - 1.0).abs() <= 1e-6 {
            continue;
        }
        if (sum - 1.0).abs() <= 1e-4 {
            for w in &mut row.weights {
                *w = (*w as f64 / sum) as f32;
            }
        } else {
            return Err(TemplateError::InvariantViolation(format!(
                "vertex {i} weights sum to {sum}, not 1"
            )));
        }
    }
    let shape_flat = container::read_f32s(raw[7]);
    let shape_blendshapes: Vec<Vec<[f32; 3]>> = if v == 0 {
        vec![Vec::new(); s]
    } else {
        shape_flat.chunks_exact(v * 3).map(|c| to3(c.to_vec())).collect()
    };
    let region_labels = raw[8]
        .iter()
        .enumerate()
        .map(|(t, &r)| {
            Region::from_u8(r).ok_or_else(|| {
                TemplateError::InvariantViolation(format!("triangle {t} has unknown region label {r}"))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let joint_names = if header.joint_names.is_empty() {
        (0..n_b).map(|j| format!("joint_{j}")).collect()
    } else {
        header.joint_names
    };

    let t = BodyTemplate {
        vertices,
        triangles,
        uv_corners,
        parents,
        rest_joints,
        skin,
        shape_blendshapes,
        region_labels,
        joint_names,
    };
    t.validate()?;
    Ok(t)
}
