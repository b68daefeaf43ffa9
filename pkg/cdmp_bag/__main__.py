from cdmp_bag.cli import entry

entry()
