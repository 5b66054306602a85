//! Every example runs to completion.

use std::sync::Once;

fn output_dir() {
    static INIT: Once = Once::new();
    INIT.call_once(|| {
        let dir = std::env::temp_dir().join(format!("opencam-examples-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        std::env::set_var("OPENCAM_EXAMPLE_OUT", dir);
    });
}

macro_rules! example {
    ($test:ident, $file:literal) => {
        #[path = $file]
        mod $test;

        #[test]
        fn $test() {
            output_dir();
            $test::run_example().unwrap();
        }
    };
}

example!(keygen, "../examples/keygen.rs");
example!(encrypt_decrypt, "../examples/encrypt_decrypt.rs");
example!(autocorrelation, "../examples/autocorrelation.rs");
example!(threshold_attack, "../examples/threshold_attack.rs");
example!(ikpa, "../examples/ikpa.rs");
example!(ukpa, "../examples/ukpa.rs");
example!(uikpa, "../examples/uikpa.rs");
example!(keyed_study, "../examples/keyed_study.rs");
example!(privacy_utility, "../examples/privacy_utility.rs");
