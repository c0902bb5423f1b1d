//! Mapping predictions back to the scan grid and connected-component filtering.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::volume::{GeometryRecord, LabelMask, Shape3};

/// Un-mirrors `pred` if needed and embeds it at the recorded offset in a zero
/// grid of the original shape.
pub fn restore_geometry(pred: &LabelMask, geom: &GeometryRecord) -> Result<LabelMask> {
    let shape = pred.shape();
    geom.validate(shape)?;
    let o = geom.original_shape;
    let mut out = vec![0u8; o.len()];
    for z in 0..shape.d {
        for y in 0..shape.h {
            for x in 0..shape.w {
                if pred.get(z, y, x) {
                    let [oz, oy, ox] = geom.to_original(shape, [z, y, x]);
                    out[o.index(oz, oy, ox)] = 1;
                }
            }
        }
    }
    LabelMask::new(o, out, pred.spacing(), pred.origin())
}

/// Voxelwise OR of masks on the same grid.
pub fn union_masks(a: &LabelMask, b: &LabelMask) -> Result<LabelMask> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("cannot merge {} with {}", a.shape(), b.shape())));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x | y).collect();
    a.with_data(a.shape(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    /// Face neighbours only.
    Six,
    /// Face, edge and corner neighbours.
    #[default]
    TwentySix,
}

impl Connectivity {
    fn offsets(self) -> Vec<[isize; 3]> {
        let mut v = Vec::new();
        for dz in -1..=1isize {
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let l1 = dz.abs() + dy.abs() + dx.abs();
                    if l1 == 0 || (self == Connectivity::Six && l1 > 1) {
                        continue;
                    }
                    v.push([dz, dy, dx]);
                }
            }
        }
        v
    }
}

/// Component labels (0 = background, then `1..=K` in scan order of each
/// component's first voxel) and component sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentLabeling {
    pub shape: Shape3,
    pub labels: Vec<u32>,
    /// `sizes[k - 1]` is the voxel count of label `k`.
    pub sizes: Vec<usize>,
}

impl ComponentLabeling {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }
}

pub fn label_components(m: &LabelMask, conn: Connectivity) -> ComponentLabeling {
    let s = m.shape();
    let offsets = conn.offsets();
    let mut labels = vec![0u32; s.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..s.len() {
        if m.data()[start] == 0 || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[start] = label;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let [z, y, x] = s.coords(i);
            for [dz, dy, dx] in &offsets {
                if let Some(j) = s.checked_index(z as isize + dz, y as isize + dy, x as isize + dx) {
                    if m.data()[j] == 1 && labels[j] == 0 {
                        labels[j] = label;
                        queue.push_back(j);
                    }
                }
            }
        }
        sizes.push(size);
    }
    ComponentLabeling { shape: s, labels, sizes }
}

/// Keeps only the largest component; ties go to the component found first in scan order.
pub fn largest_component_with(m: &LabelMask, conn: Connectivity) -> Result<LabelMask> {
    let lab = label_components(m, conn);
    let mut best = 0;
    for (k, size) in lab.sizes.iter().enumerate() {
        if *size > lab.sizes[best] {
            best = k;
        }
    }
    if lab.sizes.is_empty() {
        return Err(Error::Degenerate("largest component of an empty mask".into()));
    }
    let keep = best as u32 + 1;
    m.with_data(m.shape(), lab.labels.iter().map(|l| (*l == keep) as u8).collect())
}

/// [`largest_component_with`] under 26-connectivity.
pub fn largest_component(m: &LabelMask) -> Result<LabelMask> {
    largest_component_with(m, Connectivity::TwentySix)
}
