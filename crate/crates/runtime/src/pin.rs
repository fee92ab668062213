//! Best-effort CPU pinning.

use crate::RuntimeError;

/// Set `BLOCKFLOW_NO_PIN=1` to turn pinning off everywhere.
pub const NO_PIN_ENV: &str = "BLOCKFLOW_NO_PIN";

pub fn pinning_disabled_by_env() -> bool {
    std::env::var(NO_PIN_ENV).is_ok_and(|v| v == "1")
}

pub fn hardware_cores() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Pins the calling thread to `core % hardware_cores()`.
#[cfg(target_os = "linux")]
pub fn pin_current_thread(core: usize) -> Result<usize, RuntimeError> {
    // Map onto the CPUs this process may actually use.
    // SAFETY: cpu_set_t is plain data; the libc calls only read/write it.
    unsafe {
        let mut allowed: libc::cpu_set_t = std::mem::zeroed();
        if libc::sched_getaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &mut allowed) != 0 {
            return Err(RuntimeError::PinUnsupported(std::io::Error::last_os_error().to_string()));
        }
        let cpus: Vec<usize> = (0..libc::CPU_SETSIZE as usize)
            .filter(|&c| libc::CPU_ISSET(c, &allowed))
            .collect();
        if cpus.is_empty() {
            return Err(RuntimeError::PinUnsupported("empty affinity mask".into()));
        }
        let cpu = cpus[core % cpus.len()];
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_SET(cpu, &mut set);
        if libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set) != 0 {
            return Err(RuntimeError::PinUnsupported(std::io::Error::last_os_error().to_string()));
        }
        Ok(cpu)
    }
}

#[cfg(not(target_os = "linux"))]
pub fn pin_current_thread(_core: usize) -> Result<usize, RuntimeError> {
    Err(RuntimeError::PinUnsupported("thread affinity is only implemented on Linux".into()))
}
