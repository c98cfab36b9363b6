//! Named parameter groups.
//!
//! A model's trainable values live in four flat vectors, one per
//! [`ParamGroup`]. Freeze rules, snapshots, optimiser state and the drift
//! regulariser all operate on these vectors directly.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::{ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Backbone,
    TextCrossAttention,
    ImageCrossAttention,
    CrossDomainSelfAttention,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [
        ParamGroup::Backbone,
        ParamGroup::TextCrossAttention,
        ParamGroup::ImageCrossAttention,
        ParamGroup::CrossDomainSelfAttention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Backbone => "backbone",
            ParamGroup::TextCrossAttention => "text_cross_attention",
            ParamGroup::ImageCrossAttention => "image_cross_attention",
            ParamGroup::CrossDomainSelfAttention => "cross_domain_self_attention",
        }
    }

    pub fn from_name(name: &str) -> Option<ParamGroup> {
        Self::ALL.into_iter().find(|g| g.name() == name)
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Location of one weight matrix (or bias row) inside a group vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorRef {
    pub group: ParamGroup,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl TensorRef {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Hands out consecutive slots in each group.
#[derive(Debug, Default)]
pub struct LayoutBuilder {
    sizes: [usize; 4],
}

impl LayoutBuilder {
    pub fn alloc(&mut self, group: ParamGroup, rows: usize, cols: usize) -> TensorRef {
        let offset = self.sizes[group.index()];
        self.sizes[group.index()] += rows * cols;
        TensorRef {
            group,
            offset,
            rows,
            cols,
        }
    }

    pub fn zeros(&self) -> ParamSet {
        ParamSet {
            groups: self.sizes.map(|n| vec![0.0; n]),
        }
    }
}

/// One flat vector per group. Also used for gradients and snapshots.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    groups: [Vec<f64>; 4],
}

impl ParamSet {
    pub fn zeros_like(other: &ParamSet) -> ParamSet {
        ParamSet {
            groups: std::array::from_fn(|i| vec![0.0; other.groups[i].len()]),
        }
    }

    pub fn group(&self, g: ParamGroup) -> &[f64] {
        &self.groups[g.index()]
    }

    pub fn group_mut(&mut self, g: ParamGroup) -> &mut [f64] {
        &mut self.groups[g.index()]
    }

    pub fn total_len(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn view(&self, t: TensorRef) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((t.rows, t.cols), &self.groups[t.group.index()][t.range()])
            .expect("tensor ref within group")
    }

    pub fn view_mut(&mut self, t: TensorRef) -> ArrayViewMut2<'_, f64> {
        ArrayViewMut2::from_shape(
            (t.rows, t.cols),
            &mut self.groups[t.group.index()][t.range()],
        )
        .expect("tensor ref within group")
    }

    /// `self += other` for the given tensor.
    pub fn accumulate(&mut self, t: TensorRef, other: ArrayView2<'_, f64>) {
        let mut v = self.view_mut(t);
        v += &other;
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.groups.iter().flat_map(|g| g.iter().copied())
    }

    pub fn add_scaled(&mut self, other: &ParamSet, scale: f64) {
        for (a, b) in self.groups.iter_mut().zip(&other.groups) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.groups {
            for x in g {
                *x *= s;
            }
        }
    }

    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.groups
            .iter()
            .zip(&other.groups)
            .all(|(a, b)| a.len() == b.len())
    }

    /// Value at a flat index over the group concatenation.
    pub fn get_flat(&self, mut i: usize) -> f64 {
        for g in &self.groups {
            if i < g.len() {
                return g[i];
            }
            i -= g.len();
        }
        panic!("flat index out of range")
    }

    pub fn set_flat(&mut self, mut i: usize, v: f64) {
        for g in &mut self.groups {
            if i < g.len() {
                g[i] = v;
                return;
            }
            i -= g.len();
        }
        panic!("flat index out of range")
    }

    /// `‖self − other‖₁` over every group.
    pub fn l1_distance(&self, other: &ParamSet) -> f64 {
        self.iter().zip(other.iter()).map(|(a, b)| (a - b).abs()).sum()
    }

    /// Groups whose contents differ bitwise from `other`.
    pub fn changed_groups(&self, other: &ParamSet) -> Vec<ParamGroup> {
        ParamGroup::ALL
            .into_iter()
            .filter(|&g| {
                let a = self.group(g);
                let b = other.group(g);
                a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.to_bits() != y.to_bits())
            })
            .collect()
    }

    pub fn to_map(&self) -> BTreeMap<String, Vec<f64>> {
        ParamGroup::ALL
            .into_iter()
            .map(|g| (g.name().to_string(), self.group(g).to_vec()))
            .collect()
    }

    /// Rebuilds from a name → vector map, which must name every group once.
    pub fn from_map(map: &BTreeMap<String, Vec<f64>>) -> Result<ParamSet> {
        let mut groups: [Option<Vec<f64>>; 4] = Default::default();
        for (name, v) in map {
            let g = ParamGroup::from_name(name)
                .ok_or_else(|| Error::GroupMismatch(format!("unknown group `{name}`")))?;
            groups[g.index()] = Some(v.clone());
        }
        let mut out: [Vec<f64>; 4] = Default::default();
        for g in ParamGroup::ALL {
            out[g.index()] = groups[g.index()]
                .take()
                .ok_or_else(|| Error::GroupMismatch(format!("missing group `{g}`")))?;
        }
        Ok(ParamSet { groups: out })
    }

    /// SHA-256 over the little-endian bytes of every group, in group order.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for g in ParamGroup::ALL {
            h.update(g.name().as_bytes());
            h.update((self.group(g).len() as u64).to_le_bytes());
            for x in self.group(g) {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// A frozen copy of every group, used as θ₀ and for freeze checks.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot(pub ParamSet);

impl Snapshot {
    pub fn params(&self) -> &ParamSet {
        &self.0
    }
}
