import io
import json
import resource
import sys
import traceback

# Read the untrusted script before anything is locked down.
USER_CODE = sys.stdin.read()
CFG = json.loads(sys.argv[1])
REAL_STDOUT = sys.stdout


class SandboxViolation(Exception):
    pass


def deny(what):
    def _deny(*args, **kwargs):
        raise SandboxViolation(what)

    return _deny


def lock_down():
    mem = int(CFG["memory_bytes"])
    resource.setrlimit(resource.RLIMIT_AS, (mem, mem))

    import builtins

    builtins.open = deny("file access is disabled in the sandbox")
    builtins.input = deny("stdin is disabled in the sandbox")

    import io as _io

    _io.open = deny("file access is disabled in the sandbox")

    import os as _os

    for name in (
        "open", "fdopen", "remove", "unlink", "rename", "replace", "truncate",
        "mkdir", "makedirs", "rmdir", "removedirs", "listdir", "scandir",
        "system", "popen", "fork", "forkpty", "kill", "execv", "execve",
        "execvp", "execvpe", "spawnl", "spawnv", "chdir",
    ):
        if hasattr(_os, name):
            setattr(_os, name, deny("os." + name + " is disabled in the sandbox"))

    import socket as _socket

    for name in (
        "socket", "socketpair", "create_connection", "create_server",
        "getaddrinfo", "gethostbyname", "fromfd",
    ):
        if hasattr(_socket, name):
            setattr(_socket, name, deny("network access is disabled in the sandbox"))

    # Importing these raises ImportError outright.
    for mod in ("subprocess", "ctypes", "multiprocessing", "_socket"):
        sys.modules[mod] = None


def main():
    lock_down()

    class CappedIO(io.StringIO):
        def __init__(self, cap):
            super().__init__()
            self.cap = cap

        def write(self, s):
            if self.tell() < self.cap:
                return super().write(s[: self.cap - self.tell()])
            return len(s)

    out = CappedIO(int(CFG.get("output_cap", 1 << 20)))
    err = CappedIO(int(CFG.get("output_cap", 1 << 20)))
    sys.stdout, sys.stderr = out, err

    ns = {}
    status = "ok"
    violation = None
    try:
        exec(compile(USER_CODE, "<sandbox>", "exec"), ns, ns)
    except SandboxViolation as e:
        status = "violation"
        violation = str(e)
        traceback.print_exc(file=err)
    except MemoryError:
        status = "violation"
        violation = "memory limit exceeded"
        err.write("MemoryError: allocation exceeded the sandbox memory cap\n")
    except BaseException:
        traceback.print_exc(file=err)
    finally:
        sys.stdout, sys.stderr = REAL_STDOUT, sys.__stderr__

    result = ns.get("result")
    try:
        json.dumps(result)
    except Exception:
        result = repr(result)

    envelope = {
        "status": status,
        "violation": violation,
        "stdout": out.getvalue(),
        "stderr": err.getvalue(),
        "result": result,
    }
    REAL_STDOUT.write("\n" + json.dumps(envelope) + "\n")
    REAL_STDOUT.flush()


main()
