#![no_main]

use libfuzzer_sys::fuzz_target;
use subnet_forge::pipelines::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = RunConfig::parse(text) {
        let again = RunConfig::parse(&config.to_text()).expect("serialized config parses");
        assert_eq!(config, again);
    }
});
