//! Raw-socket packet backend for probing real hosts (feature `live`).
//!
//! Opens an `AF_INET/SOCK_RAW` socket with `IP_HDRINCL`, which requires
//! CAP_NET_RAW or root. Runtime behavior therefore cannot be covered by
//! the automated test suite; the simulated backend is the tested path.

use std::io;
use std::mem;
use std::net::Ipv4Addr;
use std::time::Duration;

use crate::packet::{wire, PacketDescription};
use crate::transport::{PacketBackend, TransportError};

pub struct RawSocketBackend {
    fd: libc::c_int,
    source: Ipv4Addr,
    target: Ipv4Addr,
}

impl RawSocketBackend {
    /// `source` must be the address of the local interface facing the
    /// target; it ends up in the IP header and drives response filtering.
    pub fn new(source: Ipv4Addr, target: Ipv4Addr, timeout: Duration) -> io::Result<Self> {
        let fd = unsafe { libc::socket(libc::AF_INET, libc::SOCK_RAW, libc::IPPROTO_TCP) };
        if fd < 0 {
            return Err(io::Error::last_os_error());
        }
        let backend = RawSocketBackend { fd, source, target };

        let one: libc::c_int = 1;
        let rc = unsafe {
            libc::setsockopt(
                fd,
                libc::IPPROTO_IP,
                libc::IP_HDRINCL,
                &one as *const _ as *const libc::c_void,
                mem::size_of::<libc::c_int>() as libc::socklen_t,
            )
        };
        if rc != 0 {
            return Err(io::Error::last_os_error());
        }

        let tv = libc::timeval {
            tv_sec: timeout.as_secs() as libc::time_t,
            tv_usec: timeout.subsec_micros() as libc::suseconds_t,
        };
        let rc = unsafe {
            libc::setsockopt(
                fd,
                libc::SOL_SOCKET,
                libc::SO_RCVTIMEO,
                &tv as *const _ as *const libc::c_void,
                mem::size_of::<libc::timeval>() as libc::socklen_t,
            )
        };
        if rc != 0 {
            return Err(io::Error::last_os_error());
        }
        Ok(backend)
    }

    fn sockaddr(&self) -> libc::sockaddr_in {
        let mut addr: libc::sockaddr_in = unsafe { mem::zeroed() };
        addr.sin_family = libc::AF_INET as libc::sa_family_t;
        addr.sin_port = 0;
        addr.sin_addr = libc::in_addr { s_addr: u32::from(self.target).to_be() };
        addr
    }
}

impl Drop for RawSocketBackend {
    fn drop(&mut self) {
        unsafe { libc::close(self.fd) };
    }
}

impl PacketBackend for RawSocketBackend {
    fn send(&mut self, packet: &PacketDescription) -> Result<(), TransportError> {
        let bytes = wire::assemble(packet);
        let addr = self.sockaddr();
        let rc = unsafe {
            libc::sendto(
                self.fd,
                bytes.as_ptr() as *const libc::c_void,
                bytes.len(),
                0,
                &addr as *const _ as *const libc::sockaddr,
                mem::size_of::<libc::sockaddr_in>() as libc::socklen_t,
            )
        };
        if rc < 0 {
            return Err(TransportError::Io(io::Error::last_os_error()));
        }
        Ok(())
    }

    fn receive(&mut self) -> Result<Option<PacketDescription>, TransportError> {
        let mut buf = [0u8; 65535];
        let rc = unsafe {
            libc::recvfrom(
                self.fd,
                buf.as_mut_ptr() as *mut libc::c_void,
                buf.len(),
                0,
                std::ptr::null_mut(),
                std::ptr::null_mut(),
            )
        };
        if rc < 0 {
            let err = io::Error::last_os_error();
            return match err.kind() {
                io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => Ok(None),
                _ => Err(TransportError::Io(err)),
            };
        }
        // Undecodable traffic is treated like an extraneous packet: the
        // caller's source filter will not match an empty description.
        Ok(wire::parse(&buf[..rc as usize]).or(Some(PacketDescription::default())))
    }

    fn source_addr(&self) -> Ipv4Addr {
        self.source
    }

    fn target_addr(&self) -> Ipv4Addr {
        self.target
    }
}
