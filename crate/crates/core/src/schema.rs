//! Label schema for the 16 paranasal sinus structures.
//!
//! Eight anatomical regions (four sinus types, two sides) are each split into
//! an air compartment and a soft-tissue compartment, giving 16 structure
//! codes. The coding is frozen:
//!
//! * codes 1..=8 are air, codes 9..=16 are soft tissue, and a region's
//!   soft-tissue code is always its air code plus 8;
//! * within each block the order is maxillary, frontal, ethmoid, sphenoid,
//!   right before left, so code 1 is right maxillary air and code 16 is left
//!   sphenoid soft tissue;
//! * 0 is background and never a structure code.
//!
//! External label sets with different numbering are reconciled at ingestion
//! through a [`RemapTable`]; the schema itself never changes.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of structure codes in the schema.
pub const STRUCTURE_COUNT: u8 = 16;

/// Largest valid label value (0 is background).
pub const MAX_LABEL: u8 = STRUCTURE_COUNT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sinus {
    Maxillary,
    Frontal,
    Ethmoid,
    Sphenoid,
}

impl Sinus {
    pub const ALL: [Sinus; 4] = [Sinus::Maxillary, Sinus::Frontal, Sinus::Ethmoid, Sinus::Sphenoid];

    fn index(self) -> u8 {
        match self {
            Sinus::Maxillary => 0,
            Sinus::Frontal => 1,
            Sinus::Ethmoid => 2,
            Sinus::Sphenoid => 3,
        }
    }

    /// Weight of this sinus in the modified Lund-Mackay total. The ethmoid
    /// label covers anterior and posterior cells plus the ostiomeatal complex,
    /// which the classical score grades separately, so it counts three times.
    pub fn score_weight(self) -> u32 {
        match self {
            Sinus::Ethmoid => 3,
            _ => 1,
        }
    }

    /// Latin genitive used in report tables, e.g. "maxillaris".
    pub fn latin_name(self) -> &'static str {
        match self {
            Sinus::Maxillary => "maxillaris",
            Sinus::Frontal => "frontalis",
            Sinus::Ethmoid => "ethmoidalis",
            Sinus::Sphenoid => "sphenoidalis",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Sinus::Maxillary => "maxillary",
            Sinus::Frontal => "frontal",
            Sinus::Ethmoid => "ethmoid",
            Sinus::Sphenoid => "sphenoid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Right,
    Left,
}

impl Side {
    pub const ALL: [Side; 2] = [Side::Right, Side::Left];

    fn index(self) -> u8 {
        match self {
            Side::Right => 0,
            Side::Left => 1,
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::Right => Side::Left,
            Side::Left => Side::Right,
        }
    }

    pub fn letter(self) -> &'static str {
        match self {
            Side::Right => "R",
            Side::Left => "L",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::Right => "right",
            Side::Left => "left",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tissue {
    Air,
    SoftTissue,
}

impl Tissue {
    pub const ALL: [Tissue; 2] = [Tissue::Air, Tissue::SoftTissue];

    /// Prefix used in report tables: "A." for air, "ST." for soft tissue.
    pub fn prefix(self) -> &'static str {
        match self {
            Tissue::Air => "A.",
            Tissue::SoftTissue => "ST.",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Tissue::Air => "air",
            Tissue::SoftTissue => "soft_tissue",
        }
    }
}

/// One of the 16 annotated structures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StructureId {
    pub sinus: Sinus,
    pub side: Side,
    pub tissue: Tissue,
}

impl StructureId {
    pub fn new(sinus: Sinus, side: Side, tissue: Tissue) -> Self {
        StructureId { sinus, side, tissue }
    }

    /// The structure's label code (1..=16).
    pub fn code(self) -> u8 {
        let base = self.sinus.index() * 2 + self.side.index() + 1;
        match self.tissue {
            Tissue::Air => base,
            Tissue::SoftTissue => base + 8,
        }
    }

    /// The same structure on the opposite side.
    pub fn flipped(self) -> StructureId {
        StructureId { side: self.side.opposite(), ..self }
    }

    /// Table name, e.g. "A. maxillaris (R)".
    pub fn display_name(self) -> String {
        format!("{} {} ({})", self.tissue.prefix(), self.sinus.latin_name(), self.side.letter())
    }

    /// All 16 structures in code order.
    pub fn all() -> impl Iterator<Item = StructureId> {
        (1..=MAX_LABEL).map(|c| parse_code(c).expect("codes 1..=16 are always valid"))
    }
}

impl std::fmt::Display for StructureId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.display_name())
    }
}

/// Label code for a (sinus, side, tissue) triple.
pub fn code_of(sinus: Sinus, side: Side, tissue: Tissue) -> u8 {
    StructureId::new(sinus, side, tissue).code()
}

/// Decode a label code into its structure identity.
///
/// Fails on 0 (background) and anything above 16.
pub fn parse_code(code: u8) -> Result<StructureId> {
    if !(1..=MAX_LABEL).contains(&code) {
        return Err(Error::InvalidStructureCode(code));
    }
    let tissue = if code <= 8 { Tissue::Air } else { Tissue::SoftTissue };
    let rem = (code - 1) % 8;
    let sinus = match rem / 2 {
        0 => Sinus::Maxillary,
        1 => Sinus::Frontal,
        2 => Sinus::Ethmoid,
        _ => Sinus::Sphenoid,
    };
    let side = if rem % 2 == 0 { Side::Right } else { Side::Left };
    Ok(StructureId { sinus, side, tissue })
}

/// Code of the mirror structure on the opposite side.
///
/// An involution on 1..=16: applying it twice returns the input.
pub fn flip_code(code: u8) -> Result<u8> {
    Ok(parse_code(code)?.flipped().code())
}

/// The eight (right, left) code pairs, air block first.
pub fn flip_pairs() -> [(u8, u8); 8] {
    let mut pairs = [(0u8, 0u8); 8];
    let mut i = 0;
    for tissue in Tissue::ALL {
        for sinus in Sinus::ALL {
            pairs[i] = (
                code_of(sinus, Side::Right, tissue),
                code_of(sinus, Side::Left, tissue),
            );
            i += 1;
        }
    }
    pairs
}

/// Air structure codes (1..=8).
pub fn air_codes() -> std::ops::RangeInclusive<u8> {
    1..=8
}

/// Soft-tissue structure codes (9..=16).
pub fn soft_tissue_codes() -> std::ops::RangeInclusive<u8> {
    9..=16
}

/// Offset between a region's air code and its soft-tissue code.
pub const SOFT_TISSUE_OFFSET: u8 = 8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaEntry {
    pub code: u8,
    pub sinus: Sinus,
    pub side: Side,
    pub tissue: Tissue,
    pub display_name: String,
    pub flip_code: u8,
}

/// The full schema as serializable rows, in code order.
pub fn schema_entries() -> Vec<SchemaEntry> {
    StructureId::all()
        .map(|s| SchemaEntry {
            code: s.code(),
            sinus: s.sinus,
            side: s.side,
            tissue: s.tissue,
            display_name: s.display_name(),
            flip_code: s.flipped().code(),
        })
        .collect()
}

/// Machine-readable schema sidecar (pretty-printed JSON array of entries).
pub fn schema_sidecar_json() -> String {
    let mut out = serde_json::to_string_pretty(&schema_entries()).expect("schema serializes");
    out.push('\n');
    out
}

/// Translation of external label values into schema codes, applied to raw
/// integer voxel values before schema validation.
///
/// Values without an entry pass through unchanged. Loaded from a two-column
/// CSV with header `from,to`; `to` must be a valid schema label (0..=16).
#[derive(Debug, Clone, Default)]
pub struct RemapTable {
    map: BTreeMap<i64, u8>,
}

impl RemapTable {
    pub fn new() -> Self {
        RemapTable::default()
    }

    /// Add one mapping. Fails if `from` is already mapped or `to` is not a
    /// schema label.
    pub fn insert(&mut self, from: i64, to: u8) -> Result<()> {
        if to > MAX_LABEL {
            return Err(Error::LabelOutOfSchema { value: to as i64, index: 0 });
        }
        if self.map.insert(from, to).is_some() {
            return Err(Error::DuplicateRemapEntry(from));
        }
        Ok(())
    }

    /// Parse from CSV with header `from,to`.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            from: i64,
            to: u8,
        }
        let mut table = RemapTable::new();
        let mut csv_reader = csv::Reader::from_reader(reader);
        for row in csv_reader.deserialize::<Row>() {
            let row = row?;
            table.insert(row.from, row.to)?;
        }
        Ok(table)
    }

    /// Translate one raw value.
    pub fn apply(&self, value: i64) -> i64 {
        match self.map.get(&value) {
            Some(&to) => to as i64,
            None => value,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }
}
