//! Graded octree of 8³ tiles.
//!
//! Level `l` has `2^l` tiles per unit of domain extent along each axis and
//! cell size `h_l = 2^-l / 8`. Every tile is a `Leaf` (carries unknowns), an
//! `Inner` (ancestor of leaves, used by the multigrid hierarchy) or a `Ghost`
//! (a same-level stand-in for a coarser leaf that abuts a finer one). Ghost
//! tiles carry coefficients but never field values.

use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use thiserror::Error;

pub const TILE: usize = 8;
pub const TILE_CELLS: usize = TILE * TILE * TILE;

/// Refinement depth guard; level 16 is already 2^19 cells per axis.
pub const MAX_LEVEL: u32 = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GridError {
    #[error("domain extent {0:?} is empty")]
    EmptyDomain([u32; 3]),
    #[error("target level {level} requested for tile {tile:?} is negative")]
    NegativeLevel { tile: TileCoord, level: i64 },
    #[error("target level {level} for tile {tile:?} exceeds the supported depth {MAX_LEVEL}")]
    TooDeep { tile: TileCoord, level: i64 },
    #[error("leaf tiles {0:?} and {1:?} overlap")]
    Overlap(TileCoord, TileCoord),
    #[error("leaf tiles do not cover the domain")]
    Gap,
    #[error("leaf tile {0:?} lies outside the domain")]
    OutOfDomain(TileCoord),
    #[error("face-adjacent leaves {0:?} and {1:?} differ by more than one level")]
    NotGraded(TileCoord, TileCoord),
    #[error("face lies on the domain boundary")]
    DomainBoundary,
    #[error("cell {0:?} is not in a leaf tile")]
    NotALeaf(CellIndex),
    #[error("level {0} is outside the grid's level range")]
    LevelOutOfRange(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileCoord {
    pub level: u32,
    pub ijk: [u32; 3],
}

impl TileCoord {
    pub fn new(level: u32, ijk: [u32; 3]) -> Self {
        Self { level, ijk }
    }

    pub fn parent(&self) -> Option<TileCoord> {
        (self.level > 0).then(|| TileCoord::new(self.level - 1, self.ijk.map(|a| a >> 1)))
    }

    /// Child in octant `o = ox + 2·oy + 4·oz`.
    pub fn child(&self, o: usize) -> TileCoord {
        let off = octant_offset(o);
        TileCoord::new(self.level + 1, [0, 1, 2].map(|a| 2 * self.ijk[a] + off[a] as u32))
    }

    pub fn children(&self) -> [TileCoord; 8] {
        std::array::from_fn(|o| self.child(o))
    }

    /// Edge length of the tile.
    pub fn size(&self) -> f64 {
        level_tile_size(self.level)
    }

    pub fn lower_corner(&self) -> [f64; 3] {
        let s = self.size();
        self.ijk.map(|a| a as f64 * s)
    }

    pub fn center(&self) -> [f64; 3] {
        let s = self.size();
        self.ijk.map(|a| (a as f64 + 0.5) * s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TileKind {
    Leaf,
    Inner,
    Ghost,
}

/// Face directions, ordered −x, +x, −y, +y, −z, +z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Face {
    XMinus,
    XPlus,
    YMinus,
    YPlus,
    ZMinus,
    ZPlus,
}

impl Face {
    pub const ALL: [Face; 6] = [
        Face::XMinus,
        Face::XPlus,
        Face::YMinus,
        Face::YPlus,
        Face::ZMinus,
        Face::ZPlus,
    ];

    pub fn new(axis: usize, plus: bool) -> Face {
        Face::ALL[2 * axis + plus as usize]
    }

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    #[inline]
    pub fn axis(self) -> usize {
        self as usize / 2
    }

    #[inline]
    pub fn is_plus(self) -> bool {
        self as usize % 2 == 1
    }

    pub fn opposite(self) -> Face {
        Face::new(self.axis(), !self.is_plus())
    }

    /// Unit step along the face normal.
    pub fn step(self) -> i64 {
        if self.is_plus() {
            1
        } else {
            -1
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub coord: TileCoord,
    pub kind: TileKind,
    /// Same-level tile slots per `Face` direction; `None` on the domain boundary
    /// or where no tile exists at this level.
    pub neighbors: [Option<u32>; 6],
    /// Slot at `level − 1` of the tile at `ijk >> 1`. For a ghost this is the
    /// coarse leaf it stands in for.
    pub parent: Option<u32>,
    /// Slots at `level + 1`, indexed by octant; present only on inner tiles.
    pub children: Option<[u32; 8]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIndex {
    pub tile: TileCoord,
    pub offset: [u8; 3],
}

impl CellIndex {
    pub fn h(&self) -> f64 {
        cell_size(self.tile.level)
    }

    pub fn center(&self) -> [f64; 3] {
        let h = self.h();
        [0, 1, 2].map(|a| ((self.tile.ijk[a] as usize * TILE + self.offset[a] as usize) as f64 + 0.5) * h)
    }

    /// Cell coordinates on the level's global lattice.
    pub fn global(&self) -> [u64; 3] {
        [0, 1, 2].map(|a| self.tile.ijk[a] as u64 * TILE as u64 + self.offset[a] as u64)
    }

    pub fn from_global(level: u32, g: [u64; 3]) -> CellIndex {
        CellIndex {
            tile: TileCoord::new(level, g.map(|x| (x / TILE as u64) as u32)),
            offset: g.map(|x| (x % TILE as u64) as u8),
        }
    }

    pub fn local(&self) -> usize {
        local_index(self.offset.map(|o| o as usize))
    }
}

/// Serializable description: domain extent plus the leaf tile set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDescription {
    pub domain_extent: [u32; 3],
    pub leaves: Vec<TileCoord>,
}

#[derive(Debug, Clone)]
pub struct AdaptiveGrid {
    extent: [u32; 3],
    levels: Vec<Vec<Tile>>,
    lookup: Vec<HashMap<[u32; 3], u32>>,
    l_min: u32,
    l_max: u32,
}

#[inline]
pub fn cell_size(level: u32) -> f64 {
    level_tile_size(level) / TILE as f64
}

#[inline]
pub fn level_tile_size(level: u32) -> f64 {
    (-(level as f64)).exp2()
}

#[inline]
pub fn local_index(o: [usize; 3]) -> usize {
    o[0] + TILE * (o[1] + TILE * o[2])
}

#[inline]
pub fn local_coords(idx: usize) -> [usize; 3] {
    [idx % TILE, (idx / TILE) % TILE, idx / (TILE * TILE)]
}

#[inline]
pub fn octant_offset(o: usize) -> [usize; 3] {
    [o & 1, (o >> 1) & 1, (o >> 2) & 1]
}

#[inline]
pub fn octant_of(off: [usize; 3]) -> usize {
    off[0] | (off[1] << 1) | (off[2] << 2)
}

impl AdaptiveGrid {
    /// Refines each tile top-down while `target(tile) > tile.level`, repairs
    /// grading by refining, then links inner, ghost and neighbor tiles.
    pub fn build<F>(extent: [u32; 3], target: F) -> Result<Self, GridError>
    where
        F: Fn(TileCoord) -> i64,
    {
        check_extent(extent)?;
        let mut leaves = HashSet::new();
        let mut stack: Vec<TileCoord> = Vec::new();
        for k in 0..extent[2] {
            for j in 0..extent[1] {
                for i in 0..extent[0] {
                    stack.push(TileCoord::new(0, [i, j, k]));
                }
            }
        }
        while let Some(tile) = stack.pop() {
            let t = target(tile);
            if t < 0 {
                return Err(GridError::NegativeLevel { tile, level: t });
            }
            if t > MAX_LEVEL as i64 {
                return Err(GridError::TooDeep { tile, level: t });
            }
            if t > tile.level as i64 {
                stack.extend(tile.children());
            } else {
                leaves.insert(tile);
            }
        }
        enforce_grading(extent, &mut leaves);
        let mut leaves: Vec<TileCoord> = leaves.into_iter().collect();
        leaves.sort();
        Self::from_leaves(extent, &leaves)
    }

    /// Single-level grid: every tile at `level`.
    pub fn uniform(extent: [u32; 3], level: u32) -> Result<Self, GridError> {
        Self::build(extent, |_| level as i64)
    }

    pub fn from_description(desc: &GridDescription) -> Result<Self, GridError> {
        Self::from_leaves(desc.domain_extent, &desc.leaves)
    }

    pub fn describe(&self) -> GridDescription {
        GridDescription {
            domain_extent: self.extent,
            leaves: self
                .levels
                .iter()
                .flatten()
                .filter(|t| t.kind == TileKind::Leaf)
                .map(|t| t.coord)
                .collect(),
        }
    }

    /// Validates that `leaves` partition the domain and are graded, then
    /// creates inner and ghost tiles and caches links.
    pub fn from_leaves(extent: [u32; 3], leaves: &[TileCoord]) -> Result<Self, GridError> {
        check_extent(extent)?;
        let mut kinds: HashMap<TileCoord, TileKind> = HashMap::new();
        let mut l_min = u32::MAX;
        let mut l_max = 0;
        for &leaf in leaves {
            if leaf.level > MAX_LEVEL {
                return Err(GridError::TooDeep {
                    tile: leaf,
                    level: leaf.level as i64,
                });
            }
            let n = 1u32 << leaf.level;
            if (0..3).any(|a| leaf.ijk[a] >= extent[a] * n) {
                return Err(GridError::OutOfDomain(leaf));
            }
            if kinds.insert(leaf, TileKind::Leaf).is_some() {
                return Err(GridError::Overlap(leaf, leaf));
            }
            l_min = l_min.min(leaf.level);
            l_max = l_max.max(leaf.level);
        }
        if leaves.is_empty() {
            return Err(GridError::Gap);
        }
        for &leaf in leaves {
            let mut cur = leaf;
            while let Some(p) = cur.parent() {
                match kinds.get(&p) {
                    Some(TileKind::Leaf) => return Err(GridError::Overlap(p, leaf)),
                    Some(_) => break,
                    None => {
                        kinds.insert(p, TileKind::Inner);
                    }
                }
                cur = p;
            }
        }
        // Disjoint leaves cover the domain iff their volumes add up.
        let volume: u128 = leaves.iter().map(|t| 1u128 << (3 * (l_max - t.level))).sum();
        let domain: u128 = extent.iter().map(|&e| e as u128).product::<u128>() << (3 * l_max);
        if volume != domain {
            return Err(GridError::Gap);
        }

        let leaf_set: HashSet<TileCoord> = leaves.iter().copied().collect();
        let mut ghosts = Vec::new();
        for &leaf in leaves {
            for face in Face::ALL {
                let Some(n) = neighbor_coord(extent, leaf, face) else {
                    continue;
                };
                if kinds.contains_key(&n) {
                    continue;
                }
                match covering_leaf(&leaf_set, n) {
                    Some(c) if c.level + 1 == leaf.level => ghosts.push(n),
                    Some(c) => return Err(GridError::NotGraded(leaf, c)),
                    None => unreachable!("partitioned domain has a covering leaf"),
                }
            }
            // The finer side of every face is visited from the finer leaf, so
            // checking coarser neighbors from each leaf covers all pairs.
        }
        for g in ghosts {
            kinds.insert(g, TileKind::Ghost);
        }

        let mut coords: Vec<(TileCoord, TileKind)> = kinds.into_iter().collect();
        coords.sort_by_key(|(c, _)| (c.level, c.ijk[2], c.ijk[1], c.ijk[0]));
        let nlev = l_max as usize + 1;
        let mut levels: Vec<Vec<Tile>> = vec![Vec::new(); nlev];
        let mut lookup: Vec<HashMap<[u32; 3], u32>> = vec![HashMap::new(); nlev];
        for (coord, kind) in coords {
            let l = coord.level as usize;
            lookup[l].insert(coord.ijk, levels[l].len() as u32);
            levels[l].push(Tile {
                coord,
                kind,
                neighbors: [None; 6],
                parent: None,
                children: None,
            });
        }
        for l in 0..nlev {
            for s in 0..levels[l].len() {
                let coord = levels[l][s].coord;
                for face in Face::ALL {
                    levels[l][s].neighbors[face.index()] =
                        neighbor_coord(extent, coord, face).and_then(|n| lookup[l].get(&n.ijk).copied());
                }
                if let Some(p) = coord.parent() {
                    levels[l][s].parent = lookup[l - 1].get(&p.ijk).copied();
                }
                if levels[l][s].kind == TileKind::Inner {
                    let ch = coord.children().map(|c| lookup[l + 1][&c.ijk]);
                    levels[l][s].children = Some(ch);
                }
            }
        }
        Ok(Self {
            extent,
            levels,
            lookup,
            l_min,
            l_max,
        })
    }

    pub fn extent(&self) -> [u32; 3] {
        self.extent
    }

    pub fn l_min(&self) -> u32 {
        self.l_min
    }

    pub fn l_max(&self) -> u32 {
        self.l_max
    }

    pub fn level_range(&self) -> (u32, u32) {
        (self.l_min, self.l_max)
    }

    /// All tiles at `level`, in slot order (sorted by k, j, i).
    pub fn tiles(&self, level: u32) -> &[Tile] {
        self.levels
            .get(level as usize)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    pub fn tile(&self, level: u32, slot: u32) -> &Tile {
        &self.levels[level as usize][slot as usize]
    }

    pub fn slot_of(&self, coord: TileCoord) -> Option<u32> {
        self.lookup.get(coord.level as usize)?.get(&coord.ijk).copied()
    }

    pub fn kind_of(&self, coord: TileCoord) -> Option<TileKind> {
        self.slot_of(coord).map(|s| self.tile(coord.level, s).kind)
    }

    pub fn count_tiles(&self, kind: TileKind) -> usize {
        self.levels.iter().flatten().filter(|t| t.kind == kind).count()
    }

    pub fn leaf_cell_count(&self) -> usize {
        self.count_tiles(TileKind::Leaf) * TILE_CELLS
    }

    /// Cells of every leaf tile at `level`, slot order then x-fastest.
    pub fn leaf_cells(&self, level: u32) -> impl Iterator<Item = CellIndex> + '_ {
        self.tiles(level)
            .iter()
            .filter(|t| t.kind == TileKind::Leaf)
            .flat_map(|t| {
                (0..TILE_CELLS).map(move |idx| CellIndex {
                    tile: t.coord,
                    offset: local_coords(idx).map(|o| o as u8),
                })
            })
    }

    /// The level-(l−1) leaf cell across `face` of a leaf cell whose neighbor
    /// tile is a ghost; `None` when the neighbor is at the same level.
    pub fn coarse_neighbor(&self, cell: CellIndex, face: Face) -> Result<Option<CellIndex>, GridError> {
        let slot = self
            .slot_of(cell.tile)
            .filter(|&s| self.tile(cell.tile.level, s).kind == TileKind::Leaf)
            .ok_or(GridError::NotALeaf(cell))?;
        let g = cell.global();
        let a = face.axis();
        let n_cells = (self.extent[a] as u64 * TILE as u64) << cell.tile.level;
        if (!face.is_plus() && g[a] == 0) || (face.is_plus() && g[a] + 1 == n_cells) {
            return Err(GridError::DomainBoundary);
        }
        let mut ng = g;
        ng[a] = if face.is_plus() { g[a] + 1 } else { g[a] - 1 };
        let ncell = CellIndex::from_global(cell.tile.level, ng);
        let nslot = if ncell.tile == cell.tile {
            Some(slot)
        } else {
            self.tile(cell.tile.level, slot).neighbors[face.index()]
        };
        match nslot.map(|s| self.tile(cell.tile.level, s).kind) {
            Some(TileKind::Ghost) => Ok(Some(CellIndex::from_global(
                cell.tile.level - 1,
                ng.map(|x| x >> 1),
            ))),
            _ => Ok(None),
        }
    }

    /// True when no leaf face pair skips a level.
    pub fn is_graded(&self) -> bool {
        let leaves: HashSet<TileCoord> = self.describe().leaves.into_iter().collect();
        leaves.iter().all(|&t| {
            Face::ALL
                .iter()
                .all(|&f| match neighbor_coord(self.extent, t, f) {
                    None => true,
                    Some(n) => match covering_leaf(&leaves, n) {
                        Some(c) => c.level + 1 >= t.level,
                        None => true,
                    },
                })
        })
    }
}

fn check_extent(extent: [u32; 3]) -> Result<(), GridError> {
    if extent.contains(&0) {
        Err(GridError::EmptyDomain(extent))
    } else {
        Ok(())
    }
}

/// Same-level tile across `face`, or `None` outside the domain.
pub fn neighbor_coord(extent: [u32; 3], t: TileCoord, face: Face) -> Option<TileCoord> {
    let a = face.axis();
    let n = extent[a] << t.level;
    let mut ijk = t.ijk;
    if face.is_plus() {
        if ijk[a] + 1 >= n {
            return None;
        }
        ijk[a] += 1;
    } else {
        if ijk[a] == 0 {
            return None;
        }
        ijk[a] -= 1;
    }
    Some(TileCoord::new(t.level, ijk))
}

/// The leaf at or above `pos` (same level or coarser) in the leaf set.
fn covering_leaf(leaves: &HashSet<TileCoord>, pos: TileCoord) -> Option<TileCoord> {
    (0..=pos.level).rev().find_map(|m| {
        let c = TileCoord::new(m, pos.ijk.map(|x| x >> (pos.level - m)));
        leaves.contains(&c).then_some(c)
    })
}

fn enforce_grading(extent: [u32; 3], leaves: &mut HashSet<TileCoord>) {
    // Finest-first sweeps: splitting a coarse leaf can only create violations
    // against even coarser leaves, which a later pass picks up.
    loop {
        let mut order: Vec<TileCoord> = leaves.iter().copied().collect();
        order.sort_by(|a, b| b.cmp(a));
        let mut changed = false;
        for t in order {
            if !leaves.contains(&t) {
                continue;
            }
            for face in Face::ALL {
                let Some(n) = neighbor_coord(extent, t, face) else {
                    continue;
                };
                if let Some(c) = covering_leaf(leaves, n) {
                    if c.level + 1 < t.level {
                        leaves.remove(&c);
                        leaves.extend(c.children());
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
}
