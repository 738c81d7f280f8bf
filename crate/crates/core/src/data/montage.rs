use crate::error::{bail, Result};

/// The 32-channel 10-20 montage in recording order.
pub const BIOSEMI32: [&str; 32] = [
    "Fp1", "AF3", "F7", "F3", "FC1", "FC5", "T7", "C3", "CP1", "CP5", "P7", "P3", "Pz", "PO3",
    "O1", "Oz", "O2", "PO4", "P4", "P8", "CP6", "CP2", "C4", "T8", "FC6", "FC2", "F4", "F8",
    "AF4", "Fp2", "Fz", "Cz",
];

/// Motor-imagery class names, index = label. Metadata only.
pub const CLASS_NAMES: [&str; 4] = ["left_hand", "right_hand", "feet", "tongue"];

// Approximate flat scalp coordinates: x to the right ear, y to the nose,
// radius 1 on the Fpz-T7-Oz-T8 circle.
const POSITIONS: [(&str, f64, f64); 32] = [
    ("Fp1", -0.31, 0.95),
    ("AF3", -0.33, 0.75),
    ("F7", -0.81, 0.59),
    ("F3", -0.41, 0.50),
    ("FC1", -0.21, 0.21),
    ("FC5", -0.70, 0.26),
    ("T7", -1.00, 0.00),
    ("C3", -0.50, 0.00),
    ("CP1", -0.21, -0.21),
    ("CP5", -0.70, -0.26),
    ("P7", -0.81, -0.59),
    ("P3", -0.41, -0.50),
    ("Pz", 0.00, -0.40),
    ("PO3", -0.33, -0.75),
    ("O1", -0.31, -0.95),
    ("Oz", 0.00, -1.00),
    ("O2", 0.31, -0.95),
    ("PO4", 0.33, -0.75),
    ("P4", 0.41, -0.50),
    ("P8", 0.81, -0.59),
    ("CP6", 0.70, -0.26),
    ("CP2", 0.21, -0.21),
    ("C4", 0.50, 0.00),
    ("T8", 1.00, 0.00),
    ("FC6", 0.70, 0.26),
    ("FC2", 0.21, 0.21),
    ("F4", 0.41, 0.50),
    ("F8", 0.81, 0.59),
    ("AF4", 0.33, 0.75),
    ("Fp2", 0.31, 0.95),
    ("Fz", 0.00, 0.40),
    ("Cz", 0.00, 0.00),
];

/// Flat scalp position of a montage label.
pub fn channel_position(label: &str) -> Option<(f64, f64)> {
    POSITIONS
        .iter()
        .find(|(name, _, _)| *name == label)
        .map(|&(_, x, y)| (x, y))
}

/// One reconstruction scenario: a target electrode and the two electrodes it
/// is generated from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyRow {
    pub target: String,
    pub inputs: [String; 2],
}

/// Target channel → conditioning channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyTable {
    entries: Vec<AdjacencyRow>,
}

const DEFAULT_ROWS: [(&str, [&str; 2]); 8] = [
    ("AF3", ["Fp1", "F3"]),
    ("AF4", ["Fp2", "F4"]),
    ("F7", ["FC5", "F3"]),
    ("F8", ["T8", "F4"]),
    ("Fp1", ["AF3", "F3"]),
    ("Fp2", ["AF4", "F4"]),
    ("T7", ["C3", "CP1"]),
    ("T8", ["C4", "CP2"]),
];

impl Default for AdjacencyTable {
    fn default() -> Self {
        let entries = DEFAULT_ROWS
            .iter()
            .map(|(t, [a, b])| AdjacencyRow {
                target: t.to_string(),
                inputs: [a.to_string(), b.to_string()],
            })
            .collect();
        Self { entries }
    }
}

impl AdjacencyTable {
    /// Validates every label against `montage` and rejects duplicate targets.
    pub fn new(entries: Vec<AdjacencyRow>, montage: &[String]) -> Result<Self> {
        for (i, row) in entries.iter().enumerate() {
            for label in std::iter::once(&row.target).chain(row.inputs.iter()) {
                if !montage.contains(label) {
                    bail!(InvalidArgument, "adjacency row {i}: `{label}` is not in the montage");
                }
            }
            if row.inputs.contains(&row.target) {
                bail!(InvalidArgument, "adjacency row {i}: `{}` conditions on itself", row.target);
            }
            if entries[..i].iter().any(|r| r.target == row.target) {
                bail!(InvalidArgument, "target `{}` appears twice", row.target);
            }
        }
        Ok(Self { entries })
    }

    pub fn empty() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn entries(&self) -> &[AdjacencyRow] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn row(&self, target: &str) -> Option<&AdjacencyRow> {
        self.entries.iter().find(|r| r.target == target)
    }

    /// Keeps only the rows whose target is listed.
    pub fn restricted_to(&self, targets: &[String]) -> Result<Self> {
        let mut entries = Vec::with_capacity(targets.len());
        for t in targets {
            match self.row(t) {
                Some(r) => entries.push(r.clone()),
                None => bail!(InvalidArgument, "`{t}` is not a target of the adjacency table"),
            }
        }
        Ok(Self { entries })
    }
}
