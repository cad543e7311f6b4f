//! Importance hierarchy over semantic classes and the tri-state importance
//! matrices derived from it.
//!
//! Groups are ranked `1..=G` from least to most important. For matrix index
//! `t` in `1..G`, a group of rank `r` maps to `DontCare` when `r < t`, `Zero`
//! when `r == t` and `One` when `r > t`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::LabelMap;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDef {
    pub id: u32,
    pub name: String,
}

/// On-disk form of a hierarchy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct HierarchyFile {
    classes: Vec<ClassDef>,
    groups: Vec<Vec<u32>>,
    ignore_id: Option<u32>,
}

/// Ordered partition of class ids into importance groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImportanceHierarchy {
    classes: Vec<ClassDef>,
    groups: Vec<Vec<u32>>,
    ignore_id: Option<u32>,
    /// 1-based group rank per class id.
    rank_of: Vec<usize>,
}

impl ImportanceHierarchy {
    pub fn new(
        classes: Vec<ClassDef>,
        groups: Vec<Vec<u32>>,
        ignore_id: Option<u32>,
    ) -> Result<Self> {
        let c = classes.len();
        if c == 0 {
            return Err(Error::Hierarchy("class table is empty".into()));
        }
        let mut seen = vec![false; c];
        for cls in &classes {
            let id = cls.id as usize;
            if id >= c {
                return Err(Error::Hierarchy(format!(
                    "class id {} outside dense range 0..{c}",
                    cls.id
                )));
            }
            if seen[id] {
                return Err(Error::Hierarchy(format!("duplicate class id {}", cls.id)));
            }
            seen[id] = true;
        }
        if groups.is_empty() {
            return Err(Error::Hierarchy("at least one group is required".into()));
        }
        let mut rank_of = vec![0usize; c];
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::Hierarchy(format!("group G{} is empty", g + 1)));
            }
            for &id in members {
                let slot = rank_of.get_mut(id as usize).ok_or_else(|| {
                    Error::Hierarchy(format!("group G{} names unknown class {id}", g + 1))
                })?;
                if *slot != 0 {
                    return Err(Error::Hierarchy(format!(
                        "duplicate class id {id} (in G{} and G{})",
                        *slot,
                        g + 1
                    )));
                }
                *slot = g + 1;
            }
        }
        if let Some(missing) = rank_of.iter().position(|&r| r == 0) {
            return Err(Error::Hierarchy(format!("class {missing} unassigned")));
        }
        if let Some(ignore) = ignore_id {
            if (ignore as usize) < c {
                return Err(Error::Hierarchy(format!(
                    "ignore id {ignore} collides with a class id"
                )));
            }
        }
        let mut classes = classes;
        classes.sort_by_key(|cls| cls.id);
        Ok(ImportanceHierarchy {
            classes,
            groups,
            ignore_id,
            rank_of,
        })
    }

    /// Builds a hierarchy from class names, one group per slice of ids.
    pub fn from_names(names: &[&str], groups: &[&[u32]], ignore_id: Option<u32>) -> Result<Self> {
        let classes = names
            .iter()
            .enumerate()
            .map(|(id, name)| ClassDef {
                id: id as u32,
                name: (*name).to_string(),
            })
            .collect();
        Self::new(classes, groups.iter().map(|g| g.to_vec()).collect(), ignore_id)
    }

    /// CamVid's 11 classes ranked as in the reference experiments.
    pub fn camvid() -> Self {
        Self::from_names(
            &[
                "sky",
                "building",
                "pole",
                "road",
                "sidewalk",
                "tree",
                "sign",
                "fence",
                "car",
                "pedestrian",
                "bicyclist",
            ],
            &[&[0, 1, 5], &[2, 3, 4, 7], &[6, 8, 9, 10]],
            None,
        )
        .expect("camvid hierarchy is valid")
    }

    /// Cityscapes' 19 training classes (void = 255).
    pub fn cityscapes() -> Self {
        Self::from_names(
            &[
                "road",
                "sidewalk",
                "building",
                "wall",
                "fence",
                "pole",
                "traffic light",
                "traffic sign",
                "vegetation",
                "terrain",
                "sky",
                "person",
                "rider",
                "car",
                "truck",
                "bus",
                "train",
                "motorcycle",
                "bicycle",
            ],
            &[
                &[0, 2, 3, 8, 9, 10],
                &[13, 1, 4, 5, 11],
                &[6, 7, 12, 14, 15, 16, 17, 18],
            ],
            Some(255),
        )
        .expect("cityscapes hierarchy is valid")
    }

    /// A single group holding every class; IAL degenerates to weighted CE.
    pub fn flat(num_classes: usize) -> Self {
        let names: Vec<String> = (0..num_classes).map(|c| format!("class{c}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let all: Vec<u32> = (0..num_classes as u32).collect();
        Self::from_names(&refs, &[&all], None).expect("flat hierarchy is valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: HierarchyFile = serde_json::from_str(text)?;
        Self::new(file.classes, file.groups, file.ignore_id)
    }

    pub fn to_json(&self) -> String {
        let file = HierarchyFile {
            classes: self.classes.clone(),
            groups: self.groups.clone(),
            ignore_id: self.ignore_id,
        };
        let mut text = serde_json::to_string_pretty(&file).expect("hierarchy serializes");
        text.push('\n');
        text
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn classes(&self) -> &[ClassDef] {
        &self.classes
    }

    pub fn groups(&self) -> &[Vec<u32>] {
        &self.groups
    }

    pub fn ignore_id(&self) -> Option<u32> {
        self.ignore_id
    }

    pub fn class_name(&self, id: u32) -> &str {
        &self.classes[id as usize].name
    }

    /// 1-based rank of the group holding `class`, if it is a known class.
    pub fn rank_of(&self, class: u32) -> Option<usize> {
        self.rank_of.get(class as usize).copied()
    }

    pub fn is_ignored(&self, id: u32) -> bool {
        self.ignore_id == Some(id)
    }

    /// Same partition with class ids renamed through `perm` (`new = perm[old]`).
    pub fn relabeled(&self, perm: &[u32]) -> Result<Self> {
        if perm.len() != self.num_classes() {
            return Err(Error::InvalidArgument("permutation length != class count".into()));
        }
        let classes = self
            .classes
            .iter()
            .map(|c| ClassDef {
                id: perm[c.id as usize],
                name: c.name.clone(),
            })
            .collect();
        let groups = self
            .groups
            .iter()
            .map(|g| g.iter().map(|&id| perm[id as usize]).collect())
            .collect();
        Self::new(classes, groups, self.ignore_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellValue {
    Zero,
    One,
    DontCare,
}

impl CellValue {
    /// Numeric value of a cell that takes part in the dynamic weight.
    pub fn value(self) -> Option<f64> {
        match self {
            CellValue::Zero => Some(0.0),
            CellValue::One => Some(1.0),
            CellValue::DontCare => None,
        }
    }
}

/// Group-level values of importance matrix `M_t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatrixSpec {
    index: usize,
    cells: Vec<CellValue>,
}

impl MatrixSpec {
    /// `t`, in `1..G`.
    pub fn index(&self) -> usize {
        self.index
    }

    /// Cell of the group with 1-based `rank`.
    pub fn cell(&self, rank: usize) -> CellValue {
        self.cells[rank - 1]
    }

    pub fn cells(&self) -> &[CellValue] {
        &self.cells
    }
}

pub fn build_matrix_specs(hierarchy: &ImportanceHierarchy) -> Result<Vec<MatrixSpec>> {
    let g = hierarchy.num_groups();
    if g < 2 {
        return Err(Error::SingleGroup);
    }
    Ok((1..g)
        .map(|t| MatrixSpec {
            index: t,
            cells: (1..=g)
                .map(|r| match r.cmp(&t) {
                    std::cmp::Ordering::Less => CellValue::DontCare,
                    std::cmp::Ordering::Equal => CellValue::Zero,
                    std::cmp::Ordering::Greater => CellValue::One,
                })
                .collect(),
        })
        .collect())
}

/// Per-pixel group rank; `0` marks ignored pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupRankMap {
    n: usize,
    h: usize,
    w: usize,
    ranks: Vec<u8>,
}

impl GroupRankMap {
    pub fn ranks(&self) -> &[u8] {
        &self.ranks
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n, self.h, self.w)
    }

    pub fn get(&self, n: usize, i: usize, j: usize) -> u8 {
        self.ranks[(n * self.h + i) * self.w + j]
    }
}

/// Rasterized importance matrix. Ignored pixels are `DontCare`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriStateMap {
    n: usize,
    h: usize,
    w: usize,
    cells: Vec<CellValue>,
}

impl TriStateMap {
    pub fn cells(&self) -> &[CellValue] {
        &self.cells
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n, self.h, self.w)
    }

    pub fn get(&self, n: usize, i: usize, j: usize) -> CellValue {
        self.cells[(n * self.h + i) * self.w + j]
    }
}

pub fn group_rank_map(hierarchy: &ImportanceHierarchy, labels: &LabelMap) -> Result<GroupRankMap> {
    let ranks = labels
        .ids()
        .iter()
        .enumerate()
        .map(|(flat, &id)| {
            if hierarchy.is_ignored(id) {
                return Ok(0u8);
            }
            match hierarchy.rank_of(id) {
                Some(r) => Ok(r as u8),
                None => {
                    let (n, i, j) = labels.position(flat);
                    Err(Error::UnknownClass { id, n, i, j })
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GroupRankMap {
        n: labels.batch(),
        h: labels.height(),
        w: labels.width(),
        ranks,
    })
}

pub fn rasterize_matrix(
    spec: &MatrixSpec,
    hierarchy: &ImportanceHierarchy,
    labels: &LabelMap,
) -> Result<TriStateMap> {
    let ranks = group_rank_map(hierarchy, labels)?;
    Ok(rasterize_ranks(spec, &ranks))
}

/// Rasterize from an already computed rank map.
pub fn rasterize_ranks(spec: &MatrixSpec, ranks: &GroupRankMap) -> TriStateMap {
    TriStateMap {
        n: ranks.n,
        h: ranks.h,
        w: ranks.w,
        cells: ranks
            .ranks
            .iter()
            .map(|&r| {
                if r == 0 {
                    CellValue::DontCare
                } else {
                    spec.cell(r as usize)
                }
            })
            .collect(),
    }
}
