//! Bundled run configurations.
//!
//! Each preset keeps the penalty, step constant and exponent of the
//! reference calculation in `lambda`, `eta` and `n`; any retune is carried by
//! `lambda_scale` / `eta_scale` with a comment in the file.

use crate::config::RunSpec;

pub const PRESETS: [(&str, &str); 10] = [
    ("fig1", include_str!("../presets/fig1.toml")),
    ("fig3", include_str!("../presets/fig3.toml")),
    ("fig4", include_str!("../presets/fig4.toml")),
    ("fig5", include_str!("../presets/fig5.toml")),
    ("fig6", include_str!("../presets/fig6.toml")),
    ("fig7", include_str!("../presets/fig7.toml")),
    ("fig10", include_str!("../presets/fig10.toml")),
    ("fig11_T1", include_str!("../presets/fig11_T1.toml")),
    ("fig11_T5", include_str!("../presets/fig11_T5.toml")),
    ("fig11_T10", include_str!("../presets/fig11_T10.toml")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

pub fn source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load(name: &str) -> Result<RunSpec, String> {
    let text = source(name).ok_or_else(|| {
        let known: Vec<&str> = names().collect();
        format!("unknown preset {name:?}; known: {}", known.join(", "))
    })?;
    RunSpec::from_toml(text)
}
