fn main() {
    // Die quietly on SIGPIPE like other Unix filters instead of
    // panicking when stdout closes early (e.g. piped to head).
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    std::process::exit(caad::cli::run());
}
