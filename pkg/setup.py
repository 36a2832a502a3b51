"""
Setup script for the dynamic RWR engine.

Prepares a development environment: Poetry, a ``.env`` file with engine
defaults and the project dependencies.
"""

import shutil
import subprocess
import sys
from pathlib import Path

MIN_PYTHON = (3, 9)


def check_python_version():
    if sys.version_info < MIN_PYTHON:
        print(f"Error: Python {MIN_PYTHON[0]}.{MIN_PYTHON[1]}+ is required.")
        sys.exit(1)


def install_poetry():
    """
    Install Poetry if not already installed.
    """
    try:
        subprocess.run(["poetry", "--version"], check=True, capture_output=True)
    except (OSError, subprocess.CalledProcessError):
        print("Installing Poetry...")
        subprocess.run([sys.executable, "-m", "pip", "install", "poetry"], check=True)


def create_env_file():
    """
    Create .env from .env.example if it doesn't exist.
    """
    env_example = Path(".env.example")
    env_file = Path(".env")

    if env_file.exists():
        print(".env already present, leaving it untouched")
    elif env_example.exists():
        shutil.copy(env_example, env_file)
        print("Created .env (restart probability, tolerance, workers, log level)")
    else:
        print("Warning: .env.example not found, built-in defaults will be used")


def install_dependencies():
    print("Installing project dependencies...")
    subprocess.run(["poetry", "install"], check=True)


def smoke_test():
    """
    Run the CLI once to confirm the entry point is installed.
    """
    result = subprocess.run(
        ["poetry", "run", "dynamic-rwr", "--help"], capture_output=True, text=True
    )
    if result.returncode != 0:
        print("Warning: 'dynamic-rwr --help' failed:")
        print(result.stderr)
        return False
    return True


def main():
    print("Dynamic RWR - Setup")

    check_python_version()
    install_poetry()
    create_env_file()
    install_dependencies()

    if smoke_test():
        print("\nSetup complete!")
    print("Next steps:")
    print("1. Adjust .env if the defaults (c=0.15, epsilon=1e-9) don't fit")
    print("2. Run the tests: poetry run pytest")
    print("3. Try it out: poetry run dynamic-rwr bench --sweep size --synthetic-nodes 2000")


if __name__ == "__main__":
    main()
