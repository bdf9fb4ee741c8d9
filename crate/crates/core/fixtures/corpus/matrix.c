// args:
int M[6] = {1, 2, 3, 4, 5, 6};
int V[3] = {1, 0, 2};
int R[2];
int main(void) {
    for (int i = 0; i < 2; i++) {
        int s = 0;
        for (int j = 0; j < 3; j++)
            s += M[i * 3 + j] * V[j];
        R[i] = s;
    }
    return R[0] * 100 + R[1];
}
