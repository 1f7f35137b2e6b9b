def pytest_addoption(parser):
    parser.addoption("--data-dir", default=None, help="directory holding raw Covertype and MNIST files for the protocol run")
