//! Built-in scenarios, in listing order.

pub const BUILTIN: &[(&str, &str)] = &[
    ("remark42_detect", include_str!("../scenarios/remark42_detect.toml")),
    ("remark42_met", include_str!("../scenarios/remark42_met.toml")),
    ("const_hyperbolic_forward", include_str!("../scenarios/const_hyperbolic_forward.toml")),
    ("roughness_table", include_str!("../scenarios/roughness_table.toml")),
    ("deterministic_corollary", include_str!("../scenarios/deterministic_corollary.toml")),
    ("kac_rotation", include_str!("../scenarios/kac_rotation.toml")),
    ("rotation_nogap", include_str!("../scenarios/rotation_nogap.toml")),
];

pub fn find(name: &str) -> Option<&'static str> {
    BUILTIN.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}
