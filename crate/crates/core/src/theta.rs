//! Flattening of a fleet's identifiable parameters into a box-bounded vector.
//!
//! Layout order is fixed: storages by index, each contributing its selected
//! parameters in the order `p_lo, p_hi, e_lo, e_hi, e0, sigma`; then
//! adjustables by index with `p_lo, p_hi, r_lo, r_hi`. The fixed profile,
//! inner-cost weights and expected profiles are configuration, never entries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{AggregateModel, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorageParam {
    PLo,
    PHi,
    ELo,
    EHi,
    E0,
    Sigma,
}

impl StorageParam {
    pub const ALL: [StorageParam; 6] = [
        StorageParam::PLo,
        StorageParam::PHi,
        StorageParam::ELo,
        StorageParam::EHi,
        StorageParam::E0,
        StorageParam::Sigma,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StorageParam::PLo => "p_lo",
            StorageParam::PHi => "p_hi",
            StorageParam::ELo => "e_lo",
            StorageParam::EHi => "e_hi",
            StorageParam::E0 => "e0",
            StorageParam::Sigma => "sigma",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjustableParam {
    PLo,
    PHi,
    RLo,
    RHi,
}

impl AdjustableParam {
    pub const ALL: [AdjustableParam; 4] = [
        AdjustableParam::PLo,
        AdjustableParam::PHi,
        AdjustableParam::RLo,
        AdjustableParam::RHi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AdjustableParam::PLo => "p_lo",
            AdjustableParam::PHi => "p_hi",
            AdjustableParam::RLo => "r_lo",
            AdjustableParam::RHi => "r_hi",
        }
    }
}

/// Which parameters of each component kind are identified.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSelection {
    pub storage: Vec<StorageParam>,
    pub adjustable: Vec<AdjustableParam>,
}

impl Default for ParamSelection {
    fn default() -> Self {
        Self::full()
    }
}

impl ParamSelection {
    pub fn full() -> Self {
        Self {
            storage: StorageParam::ALL.to_vec(),
            adjustable: AdjustableParam::ALL.to_vec(),
        }
    }

    /// Builds a selection from parameter names; a name shared by both kinds
    /// (`p_lo`, `p_hi`) selects it for both.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self, ModelError> {
        let mut storage = Vec::new();
        let mut adjustable = Vec::new();
        for name in names {
            let name = name.as_ref();
            let s = StorageParam::ALL.iter().find(|p| p.name() == name);
            let a = AdjustableParam::ALL.iter().find(|p| p.name() == name);
            if s.is_none() && a.is_none() {
                return Err(ModelError::LayoutMismatch(format!("unknown parameter name {name:?}")));
            }
            storage.extend(s);
            adjustable.extend(a);
        }
        Ok(Self {
            storage,
            adjustable,
        }
        .normalized())
    }

    fn normalized(mut self) -> Self {
        self.storage.sort();
        self.storage.dedup();
        self.adjustable.sort();
        self.adjustable.dedup();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThetaEntry {
    Storage { index: usize, param: StorageParam },
    Adjustable { index: usize, param: AdjustableParam },
}

impl ThetaEntry {
    pub fn label(&self) -> String {
        match self {
            ThetaEntry::Storage { index, param } => format!("storages[{index}].{}", param.name()),
            ThetaEntry::Adjustable { index, param } => {
                format!("adjustables[{index}].{}", param.name())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThetaLayout {
    pub n_storage: usize,
    pub n_adjustable: usize,
    pub entries: Vec<ThetaEntry>,
}

impl ThetaLayout {
    pub fn new(n_storage: usize, n_adjustable: usize, selection: &ParamSelection) -> Self {
        let selection = selection.clone().normalized();
        let mut entries = Vec::new();
        for index in 0..n_storage {
            for &param in &selection.storage {
                entries.push(ThetaEntry::Storage { index, param });
            }
        }
        for index in 0..n_adjustable {
            for &param in &selection.adjustable {
                entries.push(ThetaEntry::Adjustable { index, param });
            }
        }
        Self {
            n_storage,
            n_adjustable,
            entries,
        }
    }

    pub fn for_model(model: &AggregateModel, selection: &ParamSelection) -> Self {
        Self::new(model.storages.len(), model.adjustables.len(), selection)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.entries.iter().map(ThetaEntry::label).collect()
    }
}

/// Per-parameter search ranges, shared by all components of a kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub storage: BTreeMap<StorageParam, (f64, f64)>,
    pub adjustable: BTreeMap<AdjustableParam, (f64, f64)>,
}

impl Default for ParamBounds {
    /// Wide ranges that contain the default fleet sampler's support.
    fn default() -> Self {
        use AdjustableParam as A;
        use StorageParam as S;
        Self {
            storage: BTreeMap::from([
                (S::PLo, (-20.0, -4.0)),
                (S::PHi, (2.0, 18.0)),
                (S::ELo, (0.0, 10.0)),
                (S::EHi, (8.0, 70.0)),
                (S::E0, (0.0, 70.0)),
                (S::Sigma, (0.8, 1.0)),
            ]),
            adjustable: BTreeMap::from([
                (A::PLo, (0.0, 6.0)),
                (A::PHi, (4.0, 16.0)),
                (A::RLo, (-4.0, -1.0)),
                (A::RHi, (1.0, 4.0)),
            ]),
        }
    }
}

impl ParamBounds {
    fn range(&self, entry: &ThetaEntry) -> Result<(f64, f64), ModelError> {
        let r = match entry {
            ThetaEntry::Storage { param, .. } => self.storage.get(param),
            ThetaEntry::Adjustable { param, .. } => self.adjustable.get(param),
        };
        r.copied()
            .ok_or_else(|| ModelError::LayoutMismatch(format!("no search range for {}", entry.label())))
    }

    pub fn boxes(&self, layout: &ThetaLayout) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        let mut lo = Vec::with_capacity(layout.len());
        let mut hi = Vec::with_capacity(layout.len());
        for e in &layout.entries {
            let (a, b) = self.range(e)?;
            if !(a <= b) {
                return Err(ModelError::Domain(format!("empty range [{a}, {b}] for {}", e.label())));
            }
            lo.push(a);
            hi.push(b);
        }
        Ok((lo, hi))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector {
    values: Vec<f64>,
    layout: ThetaLayout,
    box_lo: Vec<f64>,
    box_hi: Vec<f64>,
}

impl ThetaVector {
    pub fn new(
        values: Vec<f64>,
        layout: ThetaLayout,
        box_lo: Vec<f64>,
        box_hi: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let n = layout.len();
        for len in [values.len(), box_lo.len(), box_hi.len()] {
            if len != n {
                return Err(ModelError::LengthMismatch { expected: n, got: len });
            }
        }
        for (index, ((&value, &lo), &hi)) in values.iter().zip(&box_lo).zip(&box_hi).enumerate() {
            if !(lo <= value && value <= hi) {
                return Err(ModelError::OutOfBox { index, value, lo, hi });
            }
        }
        Ok(Self {
            values,
            layout,
            box_lo,
            box_hi,
        })
    }

    /// Maps a point of the unit cube into the box.
    pub fn from_unit(
        unit: &[f64],
        layout: ThetaLayout,
        box_lo: Vec<f64>,
        box_hi: Vec<f64>,
    ) -> Result<Self, ModelError> {
        if unit.len() != box_lo.len() || unit.len() != box_hi.len() {
            return Err(ModelError::LengthMismatch {
                expected: box_lo.len(),
                got: unit.len(),
            });
        }
        let values = unit
            .iter()
            .zip(box_lo.iter().zip(&box_hi))
            .map(|(&u, (&lo, &hi))| (lo + u.clamp(0.0, 1.0) * (hi - lo)).clamp(lo, hi))
            .collect();
        Self::new(values, layout, box_lo, box_hi)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn layout(&self) -> &ThetaLayout {
        &self.layout
    }

    pub fn box_lo(&self) -> &[f64] {
        &self.box_lo
    }

    pub fn box_hi(&self) -> &[f64] {
        &self.box_hi
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Coordinates scaled to the unit cube; degenerate box coordinates map to 0.
    pub fn to_unit(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(self.box_lo.iter().zip(&self.box_hi))
            .map(|(&v, (&lo, &hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
            .collect()
    }
}

fn read_entry(model: &AggregateModel, entry: &ThetaEntry) -> f64 {
    match *entry {
        ThetaEntry::Storage { index, param } => {
            let s = &model.storages[index];
            match param {
                StorageParam::PLo => s.p_lo,
                StorageParam::PHi => s.p_hi,
                StorageParam::ELo => s.e_lo,
                StorageParam::EHi => s.e_hi,
                StorageParam::E0 => s.e0,
                StorageParam::Sigma => s.sigma,
            }
        }
        ThetaEntry::Adjustable { index, param } => {
            let a = &model.adjustables[index];
            match param {
                AdjustableParam::PLo => a.p_lo,
                AdjustableParam::PHi => a.p_hi,
                AdjustableParam::RLo => a.r_lo,
                AdjustableParam::RHi => a.r_hi,
            }
        }
    }
}

fn write_entry(model: &mut AggregateModel, entry: &ThetaEntry, value: f64) {
    match *entry {
        ThetaEntry::Storage { index, param } => {
            let s = &mut model.storages[index];
            match param {
                StorageParam::PLo => s.p_lo = value,
                StorageParam::PHi => s.p_hi = value,
                StorageParam::ELo => s.e_lo = value,
                StorageParam::EHi => s.e_hi = value,
                StorageParam::E0 => s.e0 = value,
                StorageParam::Sigma => s.sigma = value,
            }
        }
        ThetaEntry::Adjustable { index, param } => {
            let a = &mut model.adjustables[index];
            match param {
                AdjustableParam::PLo => a.p_lo = value,
                AdjustableParam::PHi => a.p_hi = value,
                AdjustableParam::RLo => a.r_lo = value,
                AdjustableParam::RHi => a.r_hi = value,
            }
        }
    }
}

/// Collects the selected parameters of `model` into a vector bounded by `bounds`.
pub fn flatten_theta(
    model: &AggregateModel,
    selection: &ParamSelection,
    bounds: &ParamBounds,
) -> Result<ThetaVector, ModelError> {
    let layout = ThetaLayout::for_model(model, selection);
    let values = layout.entries.iter().map(|e| read_entry(model, e)).collect();
    let (lo, hi) = bounds.boxes(&layout)?;
    ThetaVector::new(values, layout, lo, hi)
}

/// Writes the vector's values into a copy of `template`.
pub fn unflatten_theta(
    theta: &ThetaVector,
    template: &AggregateModel,
) -> Result<AggregateModel, ModelError> {
    let layout = theta.layout();
    if layout.n_storage != template.storages.len() || layout.n_adjustable != template.adjustables.len() {
        return Err(ModelError::LayoutMismatch(format!(
            "layout has {} storages / {} adjustables, template has {} / {}",
            layout.n_storage,
            layout.n_adjustable,
            template.storages.len(),
            template.adjustables.len()
        )));
    }
    let mut model = template.clone();
    for (index, (entry, &value)) in layout.entries.iter().zip(theta.values()).enumerate() {
        let (lo, hi) = (theta.box_lo[index], theta.box_hi[index]);
        if !(lo <= value && value <= hi) {
            return Err(ModelError::OutOfBox { index, value, lo, hi });
        }
        write_entry(&mut model, entry, value);
    }
    Ok(model)
}
