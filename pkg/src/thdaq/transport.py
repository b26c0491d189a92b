"""Byte-stream transports connecting the device side to the host side.

A transport spec is a small URL-ish string:

    file:capture.bin          read a recorded capture (EOF ends the session)
    tcp:host:port             connect to a streaming device
    listen:port               accept one inbound connection, then stream
    serial:/dev/ttyUSB0       local serial port, optional :baud suffix (8N1)

Read transports present ``read_chunk() -> bytes | None``: a byte chunk,
b"" when nothing arrived within the poll timeout, or None at end of stream.
The poll timeout bounds how quickly an acquisition loop can react to a stop
request, so it is kept at 250 ms.
"""

import os
import socket

READ_TIMEOUT_S = 0.25
CHUNK_SIZE = 4096

STANDARD_BAUDS = (1200, 2400, 4800, 9600, 19200, 38400, 57600, 115200)


class TransportError(RuntimeError):
    """Transport could not be opened, or failed mid-stream."""


class FileTransport:
    """Replays a recorded capture file."""

    def __init__(self, path):
        try:
            self._file = open(path, "rb")
        except OSError as exc:
            raise TransportError(f"cannot open capture file {path}: {exc}") from exc
        self.name = f"file:{path}"

    def read_chunk(self) -> bytes | None:
        data = self._file.read(CHUNK_SIZE)
        return data if data else None

    def close(self):
        self._file.close()


class SocketTransport:
    """Streams from a connected TCP socket; peer close ends the stream."""

    def __init__(self, sock: socket.socket, name: str):
        self._sock = sock
        self._sock.settimeout(READ_TIMEOUT_S)
        self.name = name

    def read_chunk(self) -> bytes | None:
        try:
            data = self._sock.recv(CHUNK_SIZE)
        except socket.timeout:
            return b""
        except OSError as exc:
            raise TransportError(f"{self.name}: {exc}") from exc
        return data if data else None

    def close(self):
        self._sock.close()


class SerialTransport:
    """Local serial port configured to 8N1 via termios."""

    def __init__(self, path: str, baud: int = 9600):
        import termios

        if baud not in STANDARD_BAUDS:
            raise TransportError(
                f"unsupported baud {baud}; pick one of {STANDARD_BAUDS}"
            )
        try:
            self._fd = os.open(path, os.O_RDONLY | os.O_NOCTTY)
        except OSError as exc:
            raise TransportError(f"cannot open serial port {path}: {exc}") from exc
        try:
            speed = getattr(termios, f"B{baud}")
            attrs = termios.tcgetattr(self._fd)
            iflag, oflag, cflag, lflag, _, _, cc = attrs
            iflag = 0
            oflag = 0
            lflag = 0  # raw: no echo, no canonical line editing
            cflag &= ~(termios.CSIZE | termios.PARENB | termios.CSTOPB)
            cflag |= termios.CS8 | termios.CREAD | termios.CLOCAL
            cc[termios.VMIN] = 0
            cc[termios.VTIME] = max(1, int(READ_TIMEOUT_S * 10))  # deciseconds
            termios.tcsetattr(
                self._fd, termios.TCSANOW, [iflag, oflag, cflag, lflag, speed, speed, cc]
            )
        except termios.error as exc:
            os.close(self._fd)
            raise TransportError(f"cannot configure serial port {path}: {exc}") from exc
        self.name = f"serial:{path}@{baud}"

    def read_chunk(self) -> bytes | None:
        try:
            return os.read(self._fd, CHUNK_SIZE)  # b"" on VTIME expiry
        except OSError as exc:
            raise TransportError(f"{self.name}: {exc}") from exc

    def close(self):
        os.close(self._fd)


def open_read_transport(spec: str, *, accept_timeout_s: float = 30.0):
    """Open the read side of a transport spec (see module docstring)."""
    scheme, _, rest = spec.partition(":")
    if scheme == "file":
        return FileTransport(rest)
    if scheme == "tcp":
        host, _, port = rest.rpartition(":")
        if not host or not port.isdigit():
            raise TransportError(f"tcp spec needs host:port, got {spec!r}")
        try:
            sock = socket.create_connection((host, int(port)), timeout=accept_timeout_s)
        except OSError as exc:
            raise TransportError(f"cannot connect to {host}:{port}: {exc}") from exc
        return SocketTransport(sock, f"tcp:{host}:{port}")
    if scheme == "listen":
        host, _, port = rest.rpartition(":")
        host = host or "127.0.0.1"
        if not port.isdigit():
            raise TransportError(f"listen spec needs a port, got {spec!r}")
        server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        try:
            server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            server.bind((host, int(port)))
            server.listen(1)
            server.settimeout(accept_timeout_s)
            conn, peer = server.accept()
        except OSError as exc:
            raise TransportError(f"cannot accept on {host}:{port}: {exc}") from exc
        finally:
            server.close()
        return SocketTransport(conn, f"listen:{port}<-{peer[0]}:{peer[1]}")
    if scheme == "serial":
        path, _, baud = rest.rpartition(":")
        if path and baud.isdigit():
            return SerialTransport(path, int(baud))
        return SerialTransport(rest)
    # Bare path convenience: treat an existing file as a capture replay.
    if os.path.exists(spec):
        return FileTransport(spec)
    raise TransportError(f"unknown transport spec {spec!r}")


def open_write_stream(spec: str):
    """Open the write side used by the device simulator.

    ``tcp:host:port`` connects and returns a socket file object; anything
    else is treated as a filesystem path (regular file, named pipe or pty),
    created/truncated for regular files.
    """
    if spec.startswith("tcp:"):
        host, _, port = spec[4:].rpartition(":")
        if not host or not port.isdigit():
            raise TransportError(f"tcp spec needs host:port, got {spec!r}")
        try:
            sock = socket.create_connection((host, int(port)))
        except OSError as exc:
            raise TransportError(f"cannot connect to {host}:{port}: {exc}") from exc
        return SocketWriteStream(sock)
    path = spec[5:] if spec.startswith("file:") else spec
    try:
        return open(path, "wb")
    except OSError as exc:
        raise TransportError(f"cannot open output {path}: {exc}") from exc


class SocketWriteStream:
    """Writable file-like over a connected socket, closing both on close()."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._file = sock.makefile("wb")

    def write(self, data: bytes) -> int:
        return self._file.write(data)

    def flush(self):
        self._file.flush()

    def close(self):
        try:
            self._file.close()
        finally:
            self._sock.close()
