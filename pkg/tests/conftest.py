import pytest

from obk.storage import BackendId, create_repository

BACKENDS = [BackendId.FILE, BackendId.RELATIONAL]


@pytest.fixture(params=BACKENDS, ids=[b.value for b in BACKENDS])
def backend(request):
    return request.param


@pytest.fixture
def make_repo(tmp_path):
    """Factory for fresh repositories; closes them at teardown."""
    created = []
    counter = [0]

    def factory(backend, **options):
        counter[0] += 1
        repo = create_repository(backend, tmp_path / f"repo{counter[0]}", **options)
        created.append(repo)
        return repo

    yield factory
    for repo in created:
        repo.close()


@pytest.fixture
def repo(backend, make_repo):
    """One fresh repository, parametrized over both backends."""
    return make_repo(backend)
