import os
import sys

DARKGREY = "\033[38;5;240m"
SUCCESS_CYAN = "\033[96m"
WARN_YELLOW = "\033[93m"
FAIL_RED = "\033[91m"
ENDC = "\033[0m"
BOLD = "\033[1m"
R_BOLD = "\033[22m"


def _colored(stream):
    # training and sweeps are often redirected to files
    return stream.isatty() and "NO_COLOR" not in os.environ


def _emit(label, msg, color="", stream=None):
    stream = stream or sys.stdout
    if _colored(stream):
        stream.write(color + BOLD + label + R_BOLD + " " + msg + ENDC + "\n")
    else:
        stream.write(f"{label} {msg}\n")
    stream.flush()


def info(msg: str):
    _emit("Info:", msg)

def success(msg: str):
    _emit("Success:", msg, SUCCESS_CYAN)

def warn(msg: str):
    _emit("Warning:", msg, WARN_YELLOW, sys.stderr)

def fail(msg: str):
    _emit("Fail:", msg, FAIL_RED, sys.stderr)

def corrupt(msg: str):
    _emit("Corrupt:", msg, FAIL_RED, sys.stderr)


def print_progress(count, total, message=None, bar_length=50):
    """Single-line progress bar, redrawn in place until count reaches total."""
    total = max(total, 1)
    percent = min(int(count * 100 / total), 100)
    label = message if message else f"{count} / {total}"

    if not _colored(sys.stdout):
        # one line per tenth instead of carriage returns
        if count >= total or percent // 10 > min(int((count - 1) * 100 / total), 100) // 10:
            sys.stdout.write(f"{label} {percent}%\n")
            sys.stdout.flush()
        return

    filled = int(percent * bar_length / 100)
    bar = "━" * filled + DARKGREY + "━" * (bar_length - filled) + SUCCESS_CYAN
    sys.stdout.write(SUCCESS_CYAN + "\r\033[K" + label + f"\t {bar} {percent}%" + ENDC)
    sys.stdout.flush()

    if count >= total:
        sys.stdout.write("\n")
        sys.stdout.flush()
