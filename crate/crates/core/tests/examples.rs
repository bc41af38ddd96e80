// Every example is compiled into this test binary and run to completion.

macro_rules! example {
    ($name:ident) => {
        mod $name {
            include!(concat!("../examples/", stringify!($name), ".rs"));

            #[test]
            fn runs() {
                main().unwrap();
            }
        }
    };
}

example!(gen_channels);
example!(train_feedback);
example!(train_gan);
example!(continual_run);
example!(memory_cost);
example!(gamma_sweep);
