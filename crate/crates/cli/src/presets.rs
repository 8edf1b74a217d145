//! Run presets shipped with the binary.

pub const PRESETS: [(&str, &str); 4] = [
    ("equilibrium-1d", include_str!("../presets/equilibrium-1d.cfg")),
    ("unitcell-2d-bias10", include_str!("../presets/unitcell-2d-bias10.cfg")),
    ("ltgaas-paper", include_str!("../presets/ltgaas-paper.cfg")),
    ("slab-1d-desk", include_str!("../presets/slab-1d-desk.cfg")),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}
