use std::io::Write;
use std::time::{SystemTime, UNIX_EPOCH};

/// Logfmt lines on standard error: `ts=.. level=.. target=.. msg=".."`.
pub fn init(level: &str) {
    let filter = level.parse().unwrap_or(log::LevelFilter::Info);
    let _ = env_logger::Builder::new()
        .filter_level(filter)
        .format(|buf, record| {
            let ts = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs_f64())
                .unwrap_or(0.0);
            let msg = record.args().to_string().replace('\\', "\\\\").replace('"', "\\\"");
            writeln!(
                buf,
                "ts={ts:.3} level={} target={} msg=\"{msg}\"",
                record.level(),
                record.target()
            )
        })
        .try_init();
}
