#![no_main]
use junction_hjb::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(config) = RunConfig::from_toml_str(text) else {
        return;
    };
    // A config that validated must build its problem or fail cleanly,
    // and must survive a serialize and parse cycle.
    let _ = config.problem_spec();
    let again = config.to_toml_string();
    let back = RunConfig::from_toml_str(&again).expect("serialized config parses");
    assert_eq!(back, config);
});
