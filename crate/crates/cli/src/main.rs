fn main() {
    let env_out = std::env::var(wigner_gaps::OUT_ENV).ok();
    std::process::exit(wigner_gaps::run(std::env::args_os(), env_out.as_deref()));
}
