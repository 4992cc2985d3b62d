//! Every example runs end to end with its quick settings.

macro_rules! example {
    ($name:ident, $path:literal) => {
        #[path = $path]
        mod $name;

        #[test]
        fn $name() {
            $name::run_example().expect(concat!(stringify!($name), " example failed"));
        }
    };
}

example!(metric, "../examples/metric.rs");
example!(losses, "../examples/losses.rs");
example!(mining, "../examples/mining.rs");
example!(mixup, "../examples/mixup.rs");
example!(train, "../examples/train.rs");
example!(retrieval, "../examples/retrieval.rs");
example!(gradcheck, "../examples/gradcheck.rs");
example!(sweep, "../examples/sweep.rs");
example!(csv_dataset, "../examples/csv_dataset.rs");
example!(benchmark, "../examples/benchmark.rs");
