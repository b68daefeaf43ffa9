#!/usr/bin/python3
from dotenv import load_dotenv
from pathlib import Path

root_path = Path(__file__).parent
dotenv_path = root_path / ".env"
load_dotenv(dotenv_path)

from cdmp_bag.cli import entry

if __name__ == "__main__":
    entry()
