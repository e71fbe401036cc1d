#![no_main]

use libfuzzer_sys::fuzz_target;
use meminfl::learners::LearnerSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(spec) = LearnerSpec::parse(text) else { return };
    let again = LearnerSpec::parse(&spec.to_config_string()).expect("reparse canonical spec");
    assert_eq!(again, spec);
});
