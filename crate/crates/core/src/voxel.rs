//! Voxel-grid robot bodies: representation, validity, repair, GA mutation and
//! cross-scale tiling.
//!
//! Cells are stored as raw integer codes so that malformed proposals (for
//! example an LLM emitting `5 = FIXED`) stay representable for logging and
//! repair. Validity is a predicate over a body, never a construction rule.

use std::collections::{HashSet, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dominant component share required before stray components are erased.
pub const REPAIR_DOMINANT_FRACTION: f64 = 0.8;
/// Mutation redraws before falling back to repair.
pub const MUTATION_ATTEMPT_CAP: usize = 50;
/// Default per-voxel resampling probability for GA mutation.
pub const DEFAULT_MUTATION_RATE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "i64")]
pub enum VoxelType {
    Empty = 0,
    Rigid = 1,
    Soft = 2,
    HorizontalActuator = 3,
    VerticalActuator = 4,
}

impl VoxelType {
    pub const ALL: [VoxelType; 5] = [
        VoxelType::Empty,
        VoxelType::Rigid,
        VoxelType::Soft,
        VoxelType::HorizontalActuator,
        VoxelType::VerticalActuator,
    ];

    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            0 => Some(Self::Empty),
            1 => Some(Self::Rigid),
            2 => Some(Self::Soft),
            3 => Some(Self::HorizontalActuator),
            4 => Some(Self::VerticalActuator),
            _ => None,
        }
    }

    pub fn code(self) -> i64 {
        self as i64
    }

    pub fn is_actuator(self) -> bool {
        matches!(self, Self::HorizontalActuator | Self::VerticalActuator)
    }
}

impl From<VoxelType> for u8 {
    fn from(v: VoxelType) -> u8 {
        v as u8
    }
}

impl TryFrom<i64> for VoxelType {
    type Error = String;
    fn try_from(code: i64) -> Result<Self, Self::Error> {
        VoxelType::from_code(code).ok_or_else(|| format!("illegal voxel code {code}"))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BodyError {
    #[error("body must be a non-empty square matrix: {0}")]
    Malformed(String),
    #[error("body sizes differ: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("body cannot be repaired by a local edit")]
    Unrepairable,
    #[error("mutation produced no valid child after {0} attempts")]
    MutationExhausted(usize),
}

/// An `n x n` grid of voxel codes, row-major, rows top-to-bottom.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Body {
    size: usize,
    cells: Vec<i64>,
}

impl Body {
    pub fn empty(size: usize) -> Self {
        assert!(size >= 1, "body size must be positive");
        Body { size, cells: vec![0; size * size] }
    }

    pub fn from_rows(rows: Vec<Vec<i64>>) -> Result<Self, BodyError> {
        let size = rows.len();
        if size == 0 {
            return Err(BodyError::Malformed("no rows".into()));
        }
        let mut cells = Vec::with_capacity(size * size);
        for (r, row) in rows.into_iter().enumerate() {
            if row.len() != size {
                return Err(BodyError::Malformed(format!(
                    "row {r} has {} entries, expected {size}",
                    row.len()
                )));
            }
            cells.extend(row);
        }
        Ok(Body { size, cells })
    }

    pub fn from_types(size: usize, types: &[VoxelType]) -> Self {
        assert_eq!(types.len(), size * size);
        Body { size, cells: types.iter().map(|t| t.code()).collect() }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, row: usize, col: usize) -> i64 {
        self.cells[row * self.size + col]
    }

    pub fn set(&mut self, row: usize, col: usize, code: i64) {
        self.cells[row * self.size + col] = code;
    }

    /// Typed view of a cell; `None` for codes outside the body alphabet.
    pub fn voxel(&self, row: usize, col: usize) -> Option<VoxelType> {
        VoxelType::from_code(self.get(row, col))
    }

    pub fn cells(&self) -> &[i64] {
        &self.cells
    }

    pub fn rows(&self) -> Vec<Vec<i64>> {
        self.cells.chunks(self.size).map(|c| c.to_vec()).collect()
    }

    pub fn count(&self, voxel: VoxelType) -> usize {
        self.cells.iter().filter(|&&c| c == voxel.code()).count()
    }

    pub fn filled(&self) -> usize {
        self.cells.iter().filter(|&&c| c != 0).count()
    }

    pub fn actuators(&self) -> usize {
        self.count(VoxelType::HorizontalActuator) + self.count(VoxelType::VerticalActuator)
    }

    /// 4-neighbours of `(row, col)` that lie inside the grid.
    pub fn neighbors(&self, row: usize, col: usize) -> impl Iterator<Item = (usize, usize)> {
        let n = self.size as isize;
        let (r, c) = (row as isize, col as isize);
        [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)]
            .into_iter()
            .map(move |(dr, dc)| (r + dr, c + dc))
            .filter(move |&(rr, cc)| rr >= 0 && cc >= 0 && rr < n && cc < n)
            .map(|(rr, cc)| (rr as usize, cc as usize))
    }

    /// Text form used inside prompts: one row per line, space-separated codes.
    pub fn render(&self) -> String {
        self.cells
            .chunks(self.size)
            .map(|row| row.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" "))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Compact single-line JSON matrix, e.g. `[[0,3],[1,1]]`.
    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&self.rows()).expect("matrix serializes")
    }
}

impl fmt::Display for Body {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl Serialize for Body {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Body {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<i64>>::deserialize(d)?;
        Body::from_rows(rows).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub is_valid: bool,
    pub connected: bool,
    pub has_actuator: bool,
    pub legal_codes: bool,
    pub component_count: usize,
    pub largest_component_fraction: f64,
}

/// 4-connected components of the non-empty cells, each as a list of flat
/// indices. Components are ordered by their first cell in row-major order.
pub fn components(body: &Body) -> Vec<Vec<usize>> {
    let n = body.size;
    let mut seen = vec![false; n * n];
    let mut out = Vec::new();
    for start in 0..n * n {
        if seen[start] || body.cells[start] == 0 {
            continue;
        }
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(idx) = queue.pop_front() {
            comp.push(idx);
            for (r, c) in body.neighbors(idx / n, idx % n) {
                let j = r * n + c;
                if !seen[j] && body.cells[j] != 0 {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        out.push(comp);
    }
    out
}

pub fn check_validity(body: &Body) -> ValidityReport {
    let legal_codes = body.cells.iter().all(|&c| VoxelType::from_code(c).is_some());
    let has_actuator = body.cells.iter().any(|&c| c == 3 || c == 4);
    let comps = components(body);
    let filled = body.filled();
    let largest = comps.iter().map(Vec::len).max().unwrap_or(0);
    let connected = comps.len() == 1;
    ValidityReport {
        is_valid: legal_codes && connected && has_actuator && filled > 0,
        connected,
        has_actuator,
        legal_codes,
        component_count: comps.len(),
        largest_component_fraction: if filled == 0 { 0.0 } else { largest as f64 / filled as f64 },
    }
}

pub fn is_valid(body: &Body) -> bool {
    check_validity(body).is_valid
}

/// Applies only local, unambiguous fixes: illegal codes become empty, then a
/// dominant actuated component (at least 80% of the material) absorbs the
/// body by erasing every stray component.
pub fn repair(body: &Body) -> Result<Body, BodyError> {
    let mut out = body.clone();
    for c in out.cells.iter_mut() {
        if VoxelType::from_code(*c).is_none() {
            *c = 0;
        }
    }
    let comps = components(&out);
    if comps.len() > 1 {
        let filled = out.filled();
        let (best, _) = comps
            .iter()
            .enumerate()
            .max_by_key(|(i, comp)| (comp.len(), std::cmp::Reverse(*i)))
            .expect("at least two components");
        let dominant = &comps[best];
        let actuated = dominant.iter().any(|&i| matches!(out.cells[i], 3 | 4));
        if actuated && dominant.len() as f64 >= REPAIR_DOMINANT_FRACTION * filled as f64 {
            let keep: HashSet<usize> = dominant.iter().copied().collect();
            for (i, c) in out.cells.iter_mut().enumerate() {
                if !keep.contains(&i) {
                    *c = 0;
                }
            }
        }
    }
    if is_valid(&out) {
        Ok(out)
    } else {
        Err(BodyError::Unrepairable)
    }
}

/// Per-voxel uniform resampling. Draws are retried until the child is valid;
/// after [`MUTATION_ATTEMPT_CAP`] failures the last draw is handed to
/// [`repair`].
pub fn ga_mutate(parent: &Body, seed: u64, per_voxel_rate: f64) -> Result<Body, BodyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = parent.clone();
    for _ in 0..MUTATION_ATTEMPT_CAP {
        let mut child = parent.clone();
        for c in child.cells.iter_mut() {
            if rng.random::<f64>() < per_voxel_rate {
                *c = rng.random_range(0..5);
            }
        }
        if is_valid(&child) {
            return Ok(child);
        }
        last = child;
    }
    repair(&last).map_err(|_| BodyError::MutationExhausted(MUTATION_ATTEMPT_CAP))
}

/// Uniform random grid reduced to its largest component; redrawn until that
/// component carries an actuator.
pub fn random_valid_body<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Body {
    loop {
        let mut body = Body::empty(size);
        for c in body.cells.iter_mut() {
            *c = rng.random_range(0..5);
        }
        let comps = components(&body);
        let Some(largest) = comps.iter().max_by_key(|c| c.len()) else {
            continue;
        };
        let keep: HashSet<usize> = largest.iter().copied().collect();
        for (i, c) in body.cells.iter_mut().enumerate() {
            if !keep.contains(&i) {
                *c = 0;
            }
        }
        if is_valid(&body) {
            return body;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoxelEdit {
    pub row: usize,
    pub col: usize,
    pub old_code: i64,
    pub new_code: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoxelDiff {
    pub edits: Vec<VoxelEdit>,
    pub count: usize,
}

impl VoxelDiff {
    pub fn render(&self) -> String {
        if self.edits.is_empty() {
            return "(no change)".to_string();
        }
        self.edits
            .iter()
            .map(|e| format!("({},{}): {}->{}", e.row, e.col, e.old_code, e.new_code))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

pub fn diff(parent: &Body, child: &Body) -> Result<VoxelDiff, BodyError> {
    if parent.size != child.size {
        return Err(BodyError::SizeMismatch(parent.size, child.size));
    }
    let n = parent.size;
    let edits: Vec<VoxelEdit> = parent
        .cells
        .iter()
        .zip(&child.cells)
        .enumerate()
        .filter(|(_, (a, b))| a != b)
        .map(|(i, (&old_code, &new_code))| VoxelEdit { row: i / n, col: i % n, old_code, new_code })
        .collect();
    Ok(VoxelDiff { count: edits.len(), edits })
}

/// Nearest-neighbour `factor x factor` tiling of every source voxel.
pub fn upsample_tiling(source: &Body, factor: usize) -> Body {
    assert!(factor >= 1, "tiling factor must be positive");
    let n = source.size * factor;
    let mut out = Body::empty(n);
    for r in 0..n {
        for c in 0..n {
            out.set(r, c, source.get(r / factor, c / factor));
        }
    }
    out
}

/// Smallest body whose tiling reproduces `body` exactly.
pub fn primitive_tile(body: &Body) -> Body {
    let n = body.size;
    for k in (2..=n).rev() {
        if n % k != 0 {
            continue;
        }
        let m = n / k;
        let reduced = Body {
            size: m,
            cells: (0..m * m).map(|i| body.get((i / m) * k, (i % m) * k)).collect(),
        };
        if upsample_tiling(&reduced, k) == *body {
            return reduced;
        }
    }
    body.clone()
}
