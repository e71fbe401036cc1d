#![no_main]

use libfuzzer_sys::fuzz_target;
use meminfl_cli::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = RunConfig::parse(text) else { return };
    let again = RunConfig::parse(&cfg.to_toml()).expect("reparse effective config");
    assert_eq!(again.to_toml(), cfg.to_toml());
});
