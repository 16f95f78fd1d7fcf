fn main() {
    std::process::exit(bowtie::cli::run(std::env::args_os()));
}
