#![no_main]

use libfuzzer_sys::fuzz_target;
use subnet_forge::data::Dataset;
use subnet_forge::tasks::TaskRegistry;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let registry = TaskRegistry::seven(0);
    if let Ok(ds) = Dataset::parse_text(text, &registry) {
        let again = Dataset::parse_text(&ds.to_text(), &registry).expect("serialized dataset parses");
        assert_eq!(ds, again);
    }
});
