use std::path::Path;

use posewarden::config::ServiceConfig;

#[test]
fn shipped_config_spells_out_the_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../deploy/posewarden.toml");
    let config = ServiceConfig::load(Some(&path), |_| None).unwrap();
    let expected = ServiceConfig {
        data_dir: "/var/lib/posewarden".into(),
        ..ServiceConfig::default()
    };
    assert_eq!(config, expected);
}

#[test]
fn environment_overrides_the_file() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../deploy/posewarden.toml");
    let config = ServiceConfig::load(Some(&path), |k| match k {
        "PW_PORT" => Some("8080".into()),
        "PW_DATA_DIR" => Some("/tmp/pw".into()),
        _ => None,
    })
    .unwrap();
    assert_eq!((config.port, config.data_dir.to_str()), (8080, Some("/tmp/pw")));
}
